//! CSV and schema-file ingestion.
//!
//! `members.csv`: `member_id,region,<attr1>,<attr2>,...`
//! `responses.csv`: `member_id,query_id,choice_label` (blank label = missing)
//! schema (TOML): `[[attribute]] name, bins` and `[[query]] id, text, choices`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Attribute, Dataset, Member, Query, ResponseMatrix};
use crate::error::{Error, Result};

pub const MEMBERS_FILE: &str = "members.csv";
pub const RESPONSES_FILE: &str = "responses.csv";
pub const SCHEMA_FILE: &str = "schema.toml";

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    #[serde(default)]
    attribute: Vec<Attribute>,
    #[serde(default)]
    query: Vec<QueryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryEntry {
    id: String,
    #[serde(default)]
    text: String,
    choices: Vec<String>,
}

/// Reads the schema document: attribute bins and per-query ordered choices.
pub fn read_schema(path: &Path) -> Result<(Vec<Attribute>, Vec<Query>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema: SchemaFile =
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let queries: Vec<Query> = schema
        .query
        .into_iter()
        .enumerate()
        .map(|(i, q)| Query {
            id: i,
            key: q.id,
            text: q.text,
            choices: q.choices,
        })
        .collect();
    let mut keys: Vec<&str> = queries.iter().map(|q| q.key.as_str()).collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Schema(format!(
            "{}: duplicate query id",
            path.display()
        )));
    }
    for a in &schema.attribute {
        if a.bins.is_empty() {
            return Err(Error::Schema(format!(
                "attribute {} declares no bins",
                a.name
            )));
        }
    }
    Ok((schema.attribute, queries))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

/// Loads a dataset from its three files. Ids are assigned densely in file
/// (members) and schema (queries) order.
pub fn load_dataset(members_csv: &Path, responses_csv: &Path, schema: &Path) -> Result<Dataset> {
    let (attributes, queries) = read_schema(schema)?;

    let mut rdr = csv_reader(members_csv)?;
    let header = rdr.headers().map_err(|e| csv_err(members_csv, e))?.clone();
    if header.len() < 2 || &header[0] != "member_id" || &header[1] != "region" {
        return Err(parse_err(
            members_csv,
            1,
            "header must start with member_id,region",
        ));
    }
    // column index for each schema attribute
    let mut columns = Vec::with_capacity(attributes.len());
    for a in &attributes {
        let col = header.iter().position(|h| h == a.name).ok_or_else(|| {
            Error::Schema(format!("members file lacks attribute column {}", a.name))
        })?;
        columns.push(col);
    }
    for h in header.iter().skip(2) {
        if !attributes.iter().any(|a| a.name == h) {
            return Err(Error::Schema(format!(
                "column {h} is not a schema attribute"
            )));
        }
    }

    let mut members = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(members_csv, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let key = rec[0].trim().to_string();
        if key.is_empty() {
            return Err(parse_err(members_csv, line, "empty member_id"));
        }
        let region = match rec[1].trim() {
            "" => None,
            r => Some(r.to_string()),
        };
        let mut features = Vec::with_capacity(attributes.len());
        for (a, &col) in attributes.iter().zip(&columns) {
            let label = rec[col].trim();
            let bin = a.bins.iter().position(|b| b == label).ok_or_else(|| {
                Error::Schema(format!(
                    "{}:{line}: unknown bin {label:?} for attribute {}",
                    members_csv.display(),
                    a.name
                ))
            })?;
            features.push(bin);
        }
        let id = members.len();
        if index.insert(key.clone(), id).is_some() {
            return Err(Error::Integrity(format!(
                "{}:{line}: duplicate member_id {key}",
                members_csv.display()
            )));
        }
        members.push(Member {
            id,
            key,
            features,
            region,
        });
    }

    let query_index: HashMap<&str, usize> =
        queries.iter().map(|q| (q.key.as_str(), q.id)).collect();
    let mut responses = ResponseMatrix::new(members.len(), queries.len());
    let mut rdr = csv_reader(responses_csv)?;
    let header = rdr
        .headers()
        .map_err(|e| csv_err(responses_csv, e))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["member_id", "query_id", "choice_label"] {
        return Err(parse_err(
            responses_csv,
            1,
            "header must be member_id,query_id,choice_label",
        ));
    }
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(responses_csv, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let at = || format!("{}:{line}", responses_csv.display());
        let member = *index
            .get(rec[0].trim())
            .ok_or_else(|| Error::Integrity(format!("{}: unknown member_id {}", at(), &rec[0])))?;
        let query = *query_index
            .get(rec[1].trim())
            .ok_or_else(|| Error::Integrity(format!("{}: unknown query_id {}", at(), &rec[1])))?;
        let label = rec[2].trim();
        if label.is_empty() {
            continue;
        }
        let choice = queries[query].choice_index(label).ok_or_else(|| {
            Error::Integrity(format!(
                "{}: choice {label:?} is not an option of query {}",
                at(),
                queries[query].key
            ))
        })?;
        responses.insert(member, query, choice).map_err(|_| {
            Error::Integrity(format!(
                "{}: duplicate response for ({}, {})",
                at(),
                &rec[0],
                &rec[1]
            ))
        })?;
    }

    Dataset::new(attributes, members, queries, responses)
}

/// Loads `members.csv`, `responses.csv` and `schema.toml` from `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(
        &dir.join(MEMBERS_FILE),
        &dir.join(RESPONSES_FILE),
        &dir.join(SCHEMA_FILE),
    )
}

pub fn write_dataset(
    d: &Dataset,
    members_csv: &Path,
    responses_csv: &Path,
    schema: &Path,
) -> Result<()> {
    let schema_doc = SchemaFile {
        attribute: d.attributes.clone(),
        query: d
            .queries
            .iter()
            .map(|q| QueryEntry {
                id: q.key.clone(),
                text: q.text.clone(),
                choices: q.choices.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&schema_doc).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(schema, text).map_err(|e| Error::io(schema, e))?;

    fn werr(p: &Path) -> impl Fn(csv::Error) -> Error + '_ {
        move |e| Error::Serde(format!("{}: {e}", p.display()))
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(members_csv)
        .map_err(werr(members_csv))?;
    let mut header = vec!["member_id".to_string(), "region".to_string()];
    header.extend(d.attributes.iter().map(|a| a.name.clone()));
    w.write_record(&header).map_err(werr(members_csv))?;
    for m in &d.members {
        let mut row = vec![m.key.clone(), m.region.clone().unwrap_or_default()];
        row.extend(
            d.attributes
                .iter()
                .zip(&m.features)
                .map(|(a, &b)| a.bins[b].clone()),
        );
        w.write_record(&row).map_err(werr(members_csv))?;
    }
    w.flush().map_err(|e| Error::io(members_csv, e))?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(responses_csv)
        .map_err(werr(responses_csv))?;
    w.write_record(["member_id", "query_id", "choice_label"])
        .map_err(werr(responses_csv))?;
    for (m, q, c) in d.responses.iter() {
        let query = &d.queries[q];
        w.write_record([&d.members[m].key, &query.key, &query.choices[c]])
            .map_err(werr(responses_csv))?;
    }
    w.flush().map_err(|e| Error::io(responses_csv, e))?;
    Ok(())
}

pub fn write_dataset_dir(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(
        d,
        &dir.join(MEMBERS_FILE),
        &dir.join(RESPONSES_FILE),
        &dir.join(SCHEMA_FILE),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::fixtures::tagged;
    use proptest::prelude::*;

    const SCHEMA: &str = r#"
[[attribute]]
name = "age"
bins = ["18-29", "30+"]

[[query]]
id = "q1"
text = "Support A?"
choices = ["support", "oppose"]

[[query]]
id = "q2"
choices = ["yes", "no", "unsure"]
"#;

    fn write_files(
        dir: &Path,
        members: &str,
        responses: &str,
    ) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let m = dir.join("members.csv");
        let r = dir.join("responses.csv");
        let s = dir.join("schema.toml");
        fs::write(&m, members).unwrap();
        fs::write(&r, responses).unwrap();
        fs::write(&s, SCHEMA).unwrap();
        (m, r, s)
    }

    const MEMBERS: &str = "member_id,region,age\na,south,18-29\nb,west,30+\nc,,30+\n";

    #[test]
    fn full_matrix_loads_six_entries() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r, s) = write_files(
            dir.path(),
            MEMBERS,
            "member_id,query_id,choice_label\na,q1,support\na,q2,no\nb,q1,oppose\nb,q2,unsure\nc,q1,support\nc,q2,yes\n",
        );
        let d = load_dataset(&m, &r, &s).unwrap();
        assert_eq!(d.responses.len(), 6);
        assert_eq!(d.response(1, 1), Some(2));
        assert_eq!(d.members[2].region, None);
        assert_eq!(d.members[1].features, vec![1]);
    }

    #[test]
    fn blank_cell_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r, s) = write_files(
            dir.path(),
            MEMBERS,
            "member_id,query_id,choice_label\na,q1,support\na,q2,\nb,q1,oppose\nb,q2,unsure\nc,q1,support\nc,q2,yes\n",
        );
        let d = load_dataset(&m, &r, &s).unwrap();
        assert_eq!(d.responses.len(), 5);
        assert_eq!(d.response(0, 1), None);
    }

    #[test]
    fn unknown_choice_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r, s) = write_files(
            dir.path(),
            MEMBERS,
            "member_id,query_id,choice_label\na,q1,support\nb,q1,maybe\n",
        );
        let err = load_dataset(&m, &r, &s).unwrap_err();
        match err {
            Error::Integrity(msg) => assert!(msg.contains(":3:") && msg.contains("maybe"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_response_and_unknown_bin() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r, s) = write_files(
            dir.path(),
            MEMBERS,
            "member_id,query_id,choice_label\na,q1,support\na,q1,oppose\n",
        );
        assert!(matches!(load_dataset(&m, &r, &s), Err(Error::Integrity(_))));

        let (m, r, s) = write_files(
            dir.path(),
            "member_id,region,age\na,south,65+\n",
            "member_id,query_id,choice_label\n",
        );
        assert!(matches!(load_dataset(&m, &r, &s), Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r, s) = write_files(
            dir.path(),
            MEMBERS,
            "member_id,query_id,choice_label\na,q1,support\nb,q1\n",
        );
        match load_dataset(&m, &r, &s).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_schema_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("schema.toml"));
    }

    #[test]
    fn write_then_load_reproduces_files() {
        let dir = tempfile::tempdir().unwrap();
        let (m, r, s) = write_files(
            dir.path(),
            MEMBERS,
            "member_id,query_id,choice_label\na,q1,support\nc,q2,yes\nb,q2,unsure\n",
        );
        let d = load_dataset(&m, &r, &s).unwrap();
        let out = dir.path().join("out");
        write_dataset_dir(&d, &out).unwrap();
        assert_eq!(
            fs::read_to_string(out.join("members.csv")).unwrap(),
            MEMBERS
        );
        let mut rows: Vec<String> = fs::read_to_string(out.join("responses.csv"))
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        rows[1..].sort();
        assert_eq!(
            rows,
            [
                "member_id,query_id,choice_label",
                "a,q1,support",
                "b,q2,unsure",
                "c,q2,yes"
            ]
        );
        assert_eq!(load_dataset_dir(&out).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_random_datasets(n in 1usize..8, nq in 1usize..5, mask in prop::collection::vec(any::<bool>(), 40)) {
            let regions: Vec<&str> = (0..n).map(|i| if i % 3 == 0 { "west" } else { "south" }).collect();
            let mut d = tagged(&regions, nq);
            let mut responses = ResponseMatrix::new(n, nq);
            for (m, q, c) in d.responses.iter() {
                if mask[(m * nq + q) % mask.len()] {
                    responses.insert(m, q, c).unwrap();
                }
            }
            d.responses = responses;
            let dir = tempfile::tempdir().unwrap();
            write_dataset_dir(&d, dir.path()).unwrap();
            prop_assert_eq!(load_dataset_dir(dir.path()).unwrap(), d);
        }
    }
}

//! Members, queries, responses and interaction histories.

mod io;

pub use io::{
    load_dataset, load_dataset_dir, read_schema, write_dataset, write_dataset_dir, MEMBERS_FILE,
    RESPONSES_FILE, SCHEMA_FILE,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub type MemberId = usize;
pub type QueryId = usize;
pub type ChoiceIndex = usize;

/// A categorical attribute and its ordered bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub bins: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    /// Dense id assigned at load.
    pub id: MemberId,
    /// Original key from the input file.
    pub key: String,
    /// Bin index per schema attribute, in schema order.
    pub features: Vec<usize>,
    pub region: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub key: String,
    pub text: String,
    pub choices: Vec<String>,
}

impl Query {
    pub fn n_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn choice_index(&self, label: &str) -> Option<ChoiceIndex> {
        self.choices.iter().position(|c| c == label)
    }
}

/// Partial member × query matrix of choice indices. Missing responses are
/// absent entries, never a sentinel choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    n_queries: usize,
    cells: Vec<Option<u16>>,
}

impl ResponseMatrix {
    pub fn new(n_members: usize, n_queries: usize) -> Self {
        Self {
            n_queries,
            cells: vec![None; n_members * n_queries],
        }
    }

    pub fn n_members(&self) -> usize {
        if self.n_queries == 0 {
            0
        } else {
            self.cells.len() / self.n_queries
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    #[inline]
    pub fn get(&self, member: MemberId, query: QueryId) -> Option<ChoiceIndex> {
        self.cells[member * self.n_queries + query].map(usize::from)
    }

    /// Inserts a response; fails if the cell is already filled.
    pub fn insert(&mut self, member: MemberId, query: QueryId, choice: ChoiceIndex) -> Result<()> {
        let cell = &mut self.cells[member * self.n_queries + query];
        if cell.is_some() {
            return Err(Error::Integrity(format!(
                "duplicate response for member {member}, query {query}"
            )));
        }
        *cell = Some(choice as u16);
        Ok(())
    }

    /// Number of filled entries.
    pub fn len(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Filled entries in (member, query) order.
    pub fn iter(&self) -> impl Iterator<Item = (MemberId, QueryId, ChoiceIndex)> + '_ {
        let nq = self.n_queries;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.map(|c| (i / nq, i % nq, usize::from(c))))
    }

    pub fn member_row(
        &self,
        member: MemberId,
    ) -> impl Iterator<Item = (QueryId, ChoiceIndex)> + '_ {
        let start = member * self.n_queries;
        self.cells[start..start + self.n_queries]
            .iter()
            .enumerate()
            .filter_map(|(q, c)| c.map(|c| (q, usize::from(c))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Observed,
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub query: QueryId,
    pub choice: ChoiceIndex,
    pub provenance: Provenance,
    /// Probability attached to an imputed choice; 1 for observations.
    pub confidence: f64,
    /// Full imputed distribution over the query's choices, when kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probs: Vec<f64>,
}

/// Per-member ordered query/response record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionHistory {
    entries: Vec<Vec<HistoryEntry>>,
}

impl InteractionHistory {
    pub fn new(n_members: usize) -> Self {
        Self {
            entries: vec![Vec::new(); n_members],
        }
    }

    pub fn n_members(&self) -> usize {
        self.entries.len()
    }

    pub fn member(&self, member: MemberId) -> &[HistoryEntry] {
        &self.entries[member]
    }

    pub fn has(&self, member: MemberId, query: QueryId) -> bool {
        self.entries[member].iter().any(|e| e.query == query)
    }

    pub fn push(&mut self, member: MemberId, entry: HistoryEntry) -> Result<()> {
        if self.has(member, entry.query) {
            return Err(Error::Integrity(format!(
                "member {member} already has an entry for query {}",
                entry.query
            )));
        }
        self.entries[member].push(entry);
        Ok(())
    }

    pub fn record_observed(
        &mut self,
        member: MemberId,
        query: QueryId,
        choice: ChoiceIndex,
    ) -> Result<()> {
        self.push(
            member,
            HistoryEntry {
                query,
                choice,
                provenance: Provenance::Observed,
                confidence: 1.0,
                probs: Vec::new(),
            },
        )
    }

    pub fn record_imputed(
        &mut self,
        member: MemberId,
        query: QueryId,
        choice: ChoiceIndex,
        confidence: f64,
    ) -> Result<()> {
        self.push(
            member,
            HistoryEntry {
                query,
                choice,
                provenance: Provenance::Imputed,
                confidence,
                probs: Vec::new(),
            },
        )
    }

    /// Imputed entry carrying its whole distribution; the recorded choice
    /// is the argmax (lowest index on ties).
    pub fn record_imputed_distribution(
        &mut self,
        member: MemberId,
        query: QueryId,
        probs: Vec<f64>,
    ) -> Result<()> {
        if probs.is_empty() {
            return Err(Error::Parameter("empty imputed distribution".into()));
        }
        let choice = crate::scalar::argmax(&probs);
        self.push(
            member,
            HistoryEntry {
                query,
                choice,
                provenance: Provenance::Imputed,
                confidence: probs[choice],
                probs,
            },
        )
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries
            .iter()
            .flatten()
            .filter(|e| e.provenance == provenance)
            .count()
    }
}

/// An immutable survey population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub attributes: Vec<Attribute>,
    pub members: Vec<Member>,
    pub queries: Vec<Query>,
    pub responses: ResponseMatrix,
}

impl Dataset {
    /// Assembles a dataset, checking referential integrity.
    pub fn new(
        attributes: Vec<Attribute>,
        members: Vec<Member>,
        queries: Vec<Query>,
        responses: ResponseMatrix,
    ) -> Result<Self> {
        let d = Self {
            attributes,
            members,
            queries,
            responses,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, q) in self.queries.iter().enumerate() {
            if q.id != i {
                return Err(Error::Integrity(format!(
                    "query {} has non-dense id {}",
                    q.key, q.id
                )));
            }
            if q.choices.len() < 2 {
                return Err(Error::Schema(format!(
                    "query {} needs at least two choices",
                    q.key
                )));
            }
            let mut seen = q.choices.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != q.choices.len() {
                return Err(Error::Schema(format!(
                    "query {} repeats a choice label",
                    q.key
                )));
            }
        }
        let mut keys = BTreeMap::new();
        for (i, m) in self.members.iter().enumerate() {
            if m.id != i {
                return Err(Error::Integrity(format!(
                    "member {} has non-dense id {}",
                    m.key, m.id
                )));
            }
            if keys.insert(m.key.as_str(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate member id {}", m.key)));
            }
            if m.features.len() != self.attributes.len() {
                return Err(Error::Schema(format!(
                    "member {} has {} features, schema declares {}",
                    m.key,
                    m.features.len(),
                    self.attributes.len()
                )));
            }
            for (a, &bin) in self.attributes.iter().zip(&m.features) {
                if bin >= a.bins.len() {
                    return Err(Error::Schema(format!(
                        "member {}: bin {bin} out of range for attribute {}",
                        m.key, a.name
                    )));
                }
            }
        }
        if self.responses.n_members() != self.members.len()
            || self.responses.n_queries() != self.queries.len()
        {
            return Err(Error::Integrity(
                "response matrix shape does not match dataset".into(),
            ));
        }
        for (m, q, c) in self.responses.iter() {
            if c >= self.queries[q].n_choices() {
                return Err(Error::Integrity(format!(
                    "member {}: choice index {c} out of range for query {}",
                    self.members[m].key, self.queries[q].key
                )));
            }
        }
        Ok(())
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn response(&self, member: MemberId, query: QueryId) -> Option<ChoiceIndex> {
        self.responses.get(member, query)
    }

    pub fn n_choices(&self, query: QueryId) -> usize {
        self.queries[query].n_choices()
    }

    /// Copy restricted to `ids` (in the given order), with ids re-densified.
    pub fn subset(&self, ids: &[MemberId]) -> Dataset {
        let mut responses = ResponseMatrix::new(ids.len(), self.n_queries());
        let members = ids
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                for (q, c) in self.responses.member_row(old) {
                    responses.insert(new, q, c).expect("fresh matrix");
                }
                Member {
                    id: new,
                    ..self.members[old].clone()
                }
            })
            .collect();
        Dataset {
            attributes: self.attributes.clone(),
            members,
            queries: self.queries.clone(),
            responses,
        }
    }

    /// Copy with every attribute of two or more bins appended as a query
    /// that each member answers with their own bin. Returns the new query id
    /// per attribute (`None` for single-bin attributes).
    pub fn with_attribute_queries(&self) -> (Dataset, Vec<Option<QueryId>>) {
        let mut queries = self.queries.clone();
        let mut ids = Vec::with_capacity(self.attributes.len());
        for a in &self.attributes {
            if a.bins.len() < 2 {
                ids.push(None);
                continue;
            }
            let id = queries.len();
            queries.push(Query {
                id,
                key: format!("attribute:{}", a.name),
                text: a.name.clone(),
                choices: a.bins.clone(),
            });
            ids.push(Some(id));
        }
        let mut responses = ResponseMatrix::new(self.n_members(), queries.len());
        for (m, q, c) in self.responses.iter() {
            responses.insert(m, q, c).expect("fresh matrix");
        }
        for m in &self.members {
            for (bin, id) in m.features.iter().zip(&ids) {
                if let Some(q) = id {
                    responses.insert(m.id, *q, *bin).expect("fresh matrix");
                }
            }
        }
        let d = Dataset {
            attributes: self.attributes.clone(),
            members: self.members.clone(),
            queries,
            responses,
        };
        (d, ids)
    }

    /// Same members and queries with every response dropped.
    pub fn without_responses(&self) -> Dataset {
        Dataset {
            responses: ResponseMatrix::new(self.n_members(), self.n_queries()),
            ..self.clone()
        }
    }
}

/// Splits members by region tag into (train, test).
pub fn split_by_region(d: &Dataset, train_tag: &str, test_tag: &str) -> Result<(Dataset, Dataset)> {
    let pick = |tag: &str| -> Vec<MemberId> {
        d.members
            .iter()
            .filter(|m| m.region.as_deref() == Some(tag))
            .map(|m| m.id)
            .collect()
    };
    let train = pick(train_tag);
    let test = pick(test_tag);
    if train.is_empty() {
        return Err(Error::EmptySplit(format!(
            "no members tagged {train_tag:?}"
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit(format!("no members tagged {test_tag:?}")));
    }
    Ok((d.subset(&train), d.subset(&test)))
}

/// Candidate and target query sets, each sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPartition {
    pub candidates: Vec<QueryId>,
    pub targets: Vec<QueryId>,
}

/// Deterministic disjoint split of the query set under `seed`.
pub fn partition_queries(
    d: &Dataset,
    n_candidates: usize,
    n_targets: usize,
    seed: u64,
) -> Result<QueryPartition> {
    if n_candidates + n_targets > d.n_queries() {
        return Err(Error::Size(format!(
            "{n_candidates} candidates + {n_targets} targets exceeds {} queries",
            d.n_queries()
        )));
    }
    let mut ids: Vec<QueryId> = (0..d.n_queries()).collect();
    ids.shuffle(&mut rng_for(seed, "partition-queries", 0));
    let mut candidates = ids[..n_candidates].to_vec();
    let mut targets = ids[n_candidates..n_candidates + n_targets].to_vec();
    candidates.sort_unstable();
    targets.sort_unstable();
    Ok(QueryPartition {
        candidates,
        targets,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::tagged;
    use super::*;

    #[test]
    fn split_counts_and_partition() {
        let d = tagged(&["south", "west", "south", "south", "west", "south"], 2);
        let (train, test) = split_by_region(&d, "south", "west").unwrap();
        assert_eq!(train.n_members(), 4);
        assert_eq!(test.n_members(), 2);
        let mut keys: Vec<_> = train
            .members
            .iter()
            .chain(&test.members)
            .map(|m| m.key.clone())
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 6);
        // responses follow their members
        assert_eq!(test.response(0, 1), d.response(1, 1));
        assert_eq!(train.queries, test.queries);
    }

    #[test]
    fn split_without_test_members_fails() {
        let d = tagged(&["south", "south"], 1);
        assert!(matches!(
            split_by_region(&d, "south", "west"),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn split_drops_other_regions() {
        let d = tagged(&["south", "west", "midwest"], 1);
        let (a, b) = split_by_region(&d, "south", "west").unwrap();
        assert_eq!(a.n_members() + b.n_members(), 2);
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let d = tagged(&["a"], 30);
        let p = partition_queries(&d, 20, 5, 1).unwrap();
        assert_eq!(p.candidates.len(), 20);
        assert_eq!(p.targets.len(), 5);
        assert!(p.candidates.iter().all(|q| !p.targets.contains(q)));
        assert_eq!(p, partition_queries(&d, 20, 5, 1).unwrap());
        assert_ne!(p, partition_queries(&d, 20, 5, 2).unwrap());
    }

    #[test]
    fn partition_exact_cover_and_size_error() {
        let d = tagged(&["a"], 25);
        let p = partition_queries(&d, 20, 5, 9).unwrap();
        let mut all: Vec<_> = p.candidates.iter().chain(&p.targets).copied().collect();
        all.sort();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
        let d = tagged(&["a"], 24);
        assert!(matches!(
            partition_queries(&d, 20, 5, 1),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn history_rejects_duplicate_query() {
        let mut h = InteractionHistory::new(2);
        h.record_observed(0, 3, 1).unwrap();
        h.record_imputed(1, 3, 0, 0.7).unwrap();
        assert!(h.record_imputed(0, 3, 0, 0.5).is_err());
        assert_eq!(h.count(Provenance::Observed), 1);
        assert_eq!(h.count(Provenance::Imputed), 1);
    }

    #[test]
    fn response_matrix_absence_is_not_zero() {
        let mut r = ResponseMatrix::new(2, 2);
        r.insert(0, 1, 0).unwrap();
        assert_eq!(r.get(0, 1), Some(0));
        assert_eq!(r.get(1, 1), None);
        assert_eq!(r.len(), 1);
        assert!(r.insert(0, 1, 1).is_err());
    }

    #[test]
    fn attributes_become_queries() {
        let d = tagged(&["a", "b", "c"], 2);
        let (aug, ids) = d.with_attribute_queries();
        assert_eq!(ids, vec![Some(2), Some(3)]);
        aug.validate().unwrap();
        for m in 0..3 {
            assert_eq!(aug.response(m, 2), Some(d.members[m].features[0]));
            assert_eq!(aug.response(m, 3), Some(d.members[m].features[1]));
            assert_eq!(aug.response(m, 1), d.response(m, 1));
        }
    }
}

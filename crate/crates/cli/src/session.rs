//! Line protocol over stdin/stdout. The engine prints
//! `ASK <query> TO <member>...`; the caller answers with
//! `ANS <member> <choice label>` lines and `COMMIT`. The engine then prints
//! `IMP <member> <choice label> <probability>` for every imputed member and
//! the next `ASK`, or `DONE`. Bad lines get `ERR <reason>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use group_elicit::graph::{HeteroGraph, Trained};
use group_elicit::harness::Method;
use group_elicit::policy::{
    apply_round, plan_round, ElicitationState, GraphContext, PolicyConfig, RoundLog, RoundPlan,
    Strategy,
};
use group_elicit::population::{partition_queries, ChoiceIndex, Dataset, MemberId, QueryId};
use group_elicit::predictive::{posterior_update, LatentClassModel, PosteriorState};
use serde::{Deserialize, Serialize};

use crate::commands::{
    create_dir, load_dataset, need, read_json, region_subset, GNN_FILE, PREDICTOR_FILE,
};
use crate::config::resolve;
use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory written by `fit`.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Members with this tag form the graph's answered population; default
    /// is everyone outside the session region.
    #[arg(long)]
    pub train_region: Option<String>,
    /// Members with this tag take part in the session.
    #[arg(long)]
    pub test_region: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// Respondents per round.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target query ids, comma separated; drawn at random when absent.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
    /// Candidate query ids; every non-target query when absent.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    /// Number of random targets when `--targets` is absent.
    #[arg(long)]
    pub n_targets: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Session {
    state: ElicitationState<f64>,
    strategy: Strategy,
    members: Dataset,
    rounds: usize,
    plan: Option<RoundPlan>,
    answers: BTreeMap<MemberId, ChoiceIndex>,
    pub logs: Vec<RoundLog>,
    pub done: bool,
}

impl Session {
    fn ask_line(&self, plan: &RoundPlan) -> String {
        let mut line = format!("ASK {} TO", self.members.queries[plan.query].key);
        for &m in &plan.respondents {
            line.push(' ');
            line.push_str(&self.members.members[m].key);
        }
        line
    }

    fn next(&mut self) -> Result<Vec<String>, CliError> {
        if self.state.round >= self.rounds || self.state.remaining.is_empty() {
            self.done = true;
            self.plan = None;
            return Ok(vec!["DONE".into()]);
        }
        let plan = plan_round(&self.state, &self.strategy)?;
        let line = self.ask_line(&plan);
        self.plan = Some(plan);
        self.answers.clear();
        Ok(vec![line])
    }

    fn answer(&mut self, rest: &str) -> Result<String, String> {
        let plan = self.plan.as_ref().ok_or("no open question")?;
        let (key, label) = rest
            .split_once(char::is_whitespace)
            .map(|(k, l)| (k, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .ok_or("usage: ANS <member_id> <choice_label>")?;
        let m = self
            .members
            .members
            .iter()
            .position(|x| x.key == key)
            .ok_or_else(|| format!("unknown member {key}"))?;
        if !plan.respondents.contains(&m) {
            return Err(format!("member {key} was not asked"));
        }
        let q = &self.members.queries[plan.query];
        let c = q
            .choices
            .iter()
            .position(|x| x == label)
            .ok_or_else(|| format!("{label:?} is not a choice of {}", q.key))?;
        if self.answers.insert(m, c).is_some() {
            return Err(format!("member {key} already answered"));
        }
        Ok(String::new())
    }

    fn commit(&mut self) -> Result<Vec<String>, CliError> {
        let Some(plan) = self.plan.clone() else {
            return Ok(vec!["ERR no open question".into()]);
        };
        if self.answers.len() < plan.respondents.len() {
            return Ok(vec![format!(
                "ERR budget unmet: {} of {} respondents answered",
                self.answers.len(),
                plan.respondents.len()
            )]);
        }
        let answers = self.answers.clone();
        let query = plan.query;
        let source = move |m: MemberId, q: QueryId| {
            if q == query {
                answers.get(&m).copied()
            } else {
                None
            }
        };
        let log = apply_round(&mut self.state, &self.strategy, plan, &source)?;
        let q = &self.members.queries[query];
        let mut out: Vec<String> = log
            .imputed
            .iter()
            .map(|r| {
                format!(
                    "IMP {} {} {:.6}",
                    self.members.members[r.member].key, q.choices[r.choice], r.probs[r.choice]
                )
            })
            .collect();
        self.logs.push(log);
        out.extend(self.next()?);
        Ok(out)
    }

    /// Engine lines in reply to one caller line.
    pub fn handle(&mut self, line: &str) -> Result<Vec<String>, CliError> {
        let line = line.trim();
        if line.is_empty() {
            return Ok(Vec::new());
        }
        if self.done {
            return Ok(vec!["ERR session finished".into()]);
        }
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match cmd {
            "ANS" => Ok(match self.answer(rest.trim()) {
                Ok(_) => Vec::new(),
                Err(reason) => vec![format!("ERR {reason}")],
            }),
            "COMMIT" if rest.trim().is_empty() => self.commit(),
            "COMMIT" => Ok(vec!["ERR COMMIT takes no arguments".into()]),
            other => Ok(vec![format!("ERR unknown command {other:?}")]),
        }
    }
}

fn demographic_starts(
    model: &LatentClassModel<f64>,
    data: &Dataset,
    members: &Dataset,
) -> Result<Vec<PosteriorState<f64>>, CliError> {
    let (_, ids) = data.with_attribute_queries();
    let mut out = Vec::with_capacity(members.n_members());
    for m in &members.members {
        let mut s = model.initial_state();
        for (&bin, id) in m.features.iter().zip(&ids) {
            if let Some(q) = *id {
                s = posterior_update(model, &s, (q, bin))?;
            }
        }
        out.push(s);
    }
    Ok(out)
}

fn query_ids(data: &Dataset, keys: &[String]) -> Result<Vec<QueryId>, CliError> {
    let mut ids = keys
        .iter()
        .map(|k| {
            data.queries
                .iter()
                .position(|q| &q.key == k)
                .ok_or_else(|| CliError::Input(format!("unknown query {k}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

pub fn plan(args: PlanArgs) -> Result<ExitCode, CliError> {
    let a = resolve(&args, args.config.as_deref(), "plan")?;
    let dir = need(a.dataset.clone(), "dataset")?;
    let snaps = need(a.snapshots.clone(), "snapshots")?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("session"));
    let seed = a.seed.unwrap_or(0);
    let mut manifest = RunManifest::new("plan", &a, vec![seed]);
    let data = load_dataset(&dir, &mut manifest)?;
    let test_region = a.test_region.clone().unwrap_or_else(|| "test".into());
    let members = region_subset(&data, &test_region)?;
    let answered = match &a.train_region {
        Some(r) => region_subset(&data, r)?,
        None => {
            let ids: Vec<MemberId> = data
                .members
                .iter()
                .filter(|m| m.region.as_deref() != Some(test_region.as_str()))
                .map(|m| m.id)
                .collect();
            data.subset(&ids)
        }
    };
    manifest.input(&snaps.join(PREDICTOR_FILE))?;
    manifest.input(&snaps.join(GNN_FILE))?;
    let model: LatentClassModel<f64> = read_json(&snaps.join(PREDICTOR_FILE))?;
    let gnn: Trained<f64> = read_json(&snaps.join(GNN_FILE))?;
    let with_attributes = data.with_attribute_queries().0.n_queries();
    let starts = if model.n_queries() == with_attributes && with_attributes != data.n_queries() {
        demographic_starts(&model, &data, &members)?
    } else if model.n_queries() == data.n_queries() {
        vec![model.initial_state(); members.n_members()]
    } else {
        return Err(CliError::Input(format!(
            "predictor snapshot covers {} queries; the dataset has {}",
            model.n_queries(),
            data.n_queries()
        )));
    };

    let method: Method = a.method.as_deref().unwrap_or("ours").parse()?;
    if method == Method::OursImp {
        return Err(CliError::Input(
            "ours-imp asks nobody; use `run` to evaluate it".into(),
        ));
    }
    let strategy = method.strategy(10, 3);
    let targets = match &a.targets {
        Some(keys) => query_ids(&data, keys)?,
        None => {
            let nt = a
                .n_targets
                .unwrap_or(5)
                .min(data.n_queries().saturating_sub(1))
                .max(1);
            partition_queries(&data, data.n_queries() - nt, nt, seed)?.targets
        }
    };
    let candidates = match &a.candidates {
        Some(keys) => query_ids(&data, keys)?,
        None => (0..data.n_queries())
            .filter(|q| !targets.contains(q))
            .collect(),
    };
    let graph = if strategy.needs_graph() {
        let mut g = HeteroGraph::build(&answered, true)?;
        let offset = g.append_members(&members, false)?;
        Some(GraphContext::new(g, gnn.params, offset)?)
    } else {
        None
    };
    let rounds = a.rounds.unwrap_or(4);
    let mut state = ElicitationState::new(
        model,
        members.n_members(),
        candidates,
        targets,
        a.budget.unwrap_or(1),
        graph,
        PolicyConfig {
            seed,
            total_rounds: Some(rounds),
            ..PolicyConfig::default()
        },
    )?;
    state.set_starts(starts)?;
    let mut session = Session {
        state,
        strategy,
        members,
        rounds,
        plan: None,
        answers: BTreeMap::new(),
        logs: Vec::new(),
        done: false,
    };

    create_dir(&out)?;
    let mut transcript = String::new();
    let stdout = std::io::stdout();
    let emit = |lines: Vec<String>, transcript: &mut String| -> Result<(), CliError> {
        let mut w = stdout.lock();
        for l in lines {
            writeln!(w, "{l}").map_err(|e| CliError::Output(e.to_string()))?;
            transcript.push_str("> ");
            transcript.push_str(&l);
            transcript.push('\n');
        }
        w.flush().map_err(|e| CliError::Output(e.to_string()))
    };
    let mut outcome = session.next().and_then(|l| emit(l, &mut transcript));
    if outcome.is_ok() {
        for line in std::io::stdin().lock().lines() {
            if session.done {
                break;
            }
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    outcome = Err(CliError::Input(format!("stdin: {e}")));
                    break;
                }
            };
            transcript.push_str("< ");
            transcript.push_str(line.trim_end());
            transcript.push('\n');
            outcome = session.handle(&line).and_then(|l| emit(l, &mut transcript));
            if outcome.is_err() {
                break;
            }
        }
    }
    let tpath = out.join("transcript.txt");
    fs::write(&tpath, &transcript)
        .map_err(|e| CliError::Output(format!("{}: {e}", tpath.display())))?;
    let mut logs = String::new();
    for l in &session.logs {
        logs.push_str(&serde_json::to_string(l).expect("round log serializes"));
        logs.push('\n');
    }
    let lpath = out.join("rounds.jsonl");
    fs::write(&lpath, logs).map_err(|e| CliError::Output(format!("{}: {e}", lpath.display())))?;
    manifest.output("transcript.txt");
    manifest.output("rounds.jsonl");
    manifest.write(&out)?;
    outcome.map(|()| ExitCode::SUCCESS)
}

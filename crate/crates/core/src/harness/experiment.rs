use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, brier, perplexity};
use super::synthetic::{generate_population, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph::{message_pass, score, train, Adjacency, HeteroGraph, TrainConfig, Trained};
use crate::policy::{
    run_round, EigMode, ElicitationState, GraphContext, ImputeRule, PolicyConfig, QueryRule,
    RespondentRule, SoftEvidence, Strategy,
};
use crate::population::{
    partition_queries, split_by_region, Dataset, MemberId, Provenance, QueryId, QueryPartition,
};
use crate::predictive::{
    fit_em, posterior_update, predict, EmConfig, LatentClassModel, PosteriorState,
};
use crate::rng::derive_seed;
use crate::scalar::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MetaRandom,
    MetaGreedy,
    MetaGreedyImp,
    Ours,
    OursImp,
    OursMultistep,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::MetaRandom,
        Method::MetaGreedy,
        Method::MetaGreedyImp,
        Method::Ours,
        Method::OursImp,
        Method::OursMultistep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MetaRandom => "meta-random",
            Method::MetaGreedy => "meta-greedy",
            Method::MetaGreedyImp => "meta-greedy-imp",
            Method::Ours => "ours",
            Method::OursImp => "ours-imp",
            Method::OursMultistep => "ours-multistep",
        }
    }

    pub fn strategy(self, shortlist: usize, rollouts: usize) -> Strategy {
        let (query, respondents, impute) = match self {
            Method::MetaRandom => (
                QueryRule::Random,
                RespondentRule::Random,
                ImputeRule::Nothing,
            ),
            Method::MetaGreedy => (QueryRule::Eig, RespondentRule::Random, ImputeRule::Nothing),
            Method::MetaGreedyImp => (
                QueryRule::Eig,
                RespondentRule::Random,
                ImputeRule::Predictor,
            ),
            Method::Ours => (QueryRule::Eig, RespondentRule::Cluster, ImputeRule::Graph),
            Method::OursImp => (QueryRule::Eig, RespondentRule::Nobody, ImputeRule::Graph),
            Method::OursMultistep => (
                QueryRule::MultiStep {
                    shortlist,
                    rollouts,
                },
                RespondentRule::Cluster,
                ImputeRule::Graph,
            ),
        };
        Strategy {
            query,
            respondents,
            impute,
        }
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Method::Ours | Method::OursImp | Method::OursMultistep)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where target predictions for a test member come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalRoute {
    /// Members with an observed answer use the predictor; everyone else
    /// goes through the method's own imputation path.
    #[default]
    Hybrid,
    /// Everyone goes through the method's imputation path.
    Pipeline,
    /// Members with any history entry, observed or imputed, use the
    /// predictor; the rest go through the method's imputation path.
    History,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A fresh population per trial, seeded from the trial seed.
    Synthetic { spec: SyntheticSpec },
    /// A fixed population split by region tag.
    Dataset {
        data: Dataset,
        train_tag: String,
        test_tag: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Respondents per round as a fraction of the test population.
    pub budgets: Vec<f64>,
    pub rounds: usize,
    pub n_candidates: usize,
    pub n_targets: usize,
    pub trials: usize,
    pub seed: u64,
    pub em: EmConfig,
    pub gnn: TrainConfig,
    pub believe_imputed: bool,
    pub soft_evidence: SoftEvidence,
    pub impute_edges: bool,
    pub eig_mode: EigMode,
    pub shortlist: usize,
    pub rollouts: usize,
    pub eval: EvalRoute,
    /// Fit the predictor with demographic attributes as extra items and
    /// start every test member from the posterior given their attributes.
    pub demographic_prior: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            budgets: vec![0.1, 0.3, 0.5],
            rounds: 4,
            n_candidates: 20,
            n_targets: 5,
            trials: 10,
            seed: 0,
            em: EmConfig {
                pseudo_count: 0.1,
                ..EmConfig::default()
            },
            gnn: TrainConfig::default(),
            believe_imputed: true,
            soft_evidence: SoftEvidence::Distribution,
            impute_edges: false,
            eig_mode: EigMode::Exact,
            shortlist: 10,
            rollouts: 3,
            eval: EvalRoute::Hybrid,
            demographic_prior: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if let Some(b) = self.budgets.iter().find(|&&b| !(b > 0.0 && b <= 1.0)) {
            return bad(format!("budget {b} outside (0, 1]"));
        }
        if self.budgets.is_empty() {
            return bad("no budgets selected".into());
        }
        if self.rounds > self.n_candidates {
            return bad(format!(
                "{} rounds exceed {} candidate queries",
                self.rounds, self.n_candidates
            ));
        }
        if self.n_candidates == 0 || self.n_targets == 0 {
            return bad("need at least one candidate and one target query".into());
        }
        if self.trials == 0 {
            return bad("need at least one trial".into());
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, "trial", trial as u64)
    }
}

/// Respondents per round for a budget fraction: nearest integer, at least 1.
pub fn budget_count(fraction: f64, n_test: usize) -> usize {
    ((fraction * n_test as f64).round() as usize).clamp(1, n_test.max(1))
}

/// Metrics for one (method, budget, trial) after `round` rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: Method,
    pub budget: f64,
    pub trial: usize,
    pub round: usize,
    /// Query asked in this round; `None` at round 0.
    pub query: Option<QueryId>,
    pub accuracy: f64,
    pub perplexity: f64,
    pub brier: f64,
    /// Fraction of target queries each test member gets right.
    pub member_accuracy: Vec<f64>,
}

/// Everything a trial's methods share: data split, query partition and the
/// fitted predictor and graph network.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub trial: usize,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: QueryPartition,
    pub model: LatentClassModel<f64>,
    /// Starting belief per test member.
    pub starts: Vec<PosteriorState<f64>>,
    pub gnn: Trained<f64>,
    /// Training members with their answers, then the test members with
    /// features only.
    pub graph: HeteroGraph,
    pub offset: MemberId,
}

/// Per-trial reference points shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub candidates: Vec<QueryId>,
    pub targets: Vec<QueryId>,
    /// Target accuracy per member once every candidate answer is known.
    pub member_full: Vec<f64>,
    /// Target accuracy per member from demographics alone.
    pub member_cold: Vec<f64>,
    pub acc_full: f64,
    pub acc_cold: f64,
    /// Wall time of the fit; not persisted so written summaries stay
    /// byte-stable.
    #[serde(default, skip_serializing)]
    pub train_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<MetricRecord>,
    pub trials: Vec<TrialSummary>,
}

pub fn prepare_trial(
    cfg: &ExperimentConfig,
    source: &DataSource,
    trial: usize,
) -> Result<TrialSetup> {
    let seed = cfg.trial_seed(trial);
    let (train_set, test_set) = match source {
        DataSource::Synthetic { spec } => {
            let pop = generate_population(&SyntheticSpec {
                seed,
                ..spec.clone()
            })?;
            split_by_region(&pop.dataset, "south", "west")?
        }
        DataSource::Dataset {
            data,
            train_tag,
            test_tag,
        } => split_by_region(data, train_tag, test_tag)?,
    };
    let partition = partition_queries(&test_set, cfg.n_candidates, cfg.n_targets, seed)?;
    let fit = FitOptions {
        em: cfg.em.clone(),
        gnn: cfg.gnn.clone(),
        demographic_prior: cfg.demographic_prior,
    };
    fit_setup(trial, seed, train_set, test_set, partition, &fit)
}

/// How a trial's predictor and graph network are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub em: EmConfig,
    pub gnn: TrainConfig,
    pub demographic_prior: bool,
}

/// Fits the predictor and graph network on `train` under `seed` and appends
/// the test members to the graph.
pub fn fit_setup(
    trial: usize,
    seed: u64,
    train_set: Dataset,
    test_set: Dataset,
    partition: QueryPartition,
    fit: &FitOptions,
) -> Result<TrialSetup> {
    let em = EmConfig {
        seed,
        ..fit.em.clone()
    };
    let (model, starts) = if fit.demographic_prior {
        let (aug, ids) = train_set.with_attribute_queries();
        let model = fit_em::<f64>(&aug, &em)?;
        let starts = test_set
            .members
            .iter()
            .map(|m| {
                let mut s = model.initial_state();
                for (&bin, id) in m.features.iter().zip(&ids) {
                    if let Some(q) = *id {
                        s = posterior_update(&model, &s, (q, bin))?;
                    }
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        (model, starts)
    } else {
        let model = fit_em::<f64>(&train_set, &em)?;
        let starts = vec![model.initial_state(); test_set.n_members()];
        (model, starts)
    };
    let train_graph = HeteroGraph::build(&train_set, true)?;
    let gnn = train::<f64>(
        &train_graph,
        &TrainConfig {
            seed,
            ..fit.gnn.clone()
        },
    )?;
    let mut graph = train_graph;
    let offset = graph.append_members(&test_set, false)?;
    Ok(TrialSetup {
        trial,
        seed,
        train: train_set,
        test: test_set,
        partition,
        model,
        starts,
        gnn,
        graph,
        offset,
    })
}

fn truth_for(test: &Dataset, m: MemberId, q: QueryId) -> Result<usize> {
    test.response(m, q).ok_or(Error::DataCoverage {
        member: m,
        query: q,
    })
}

/// Scores per-member target predictions; `rows[m][j]` is the distribution
/// for target `j`.
fn score_rows(
    method: Method,
    budget: f64,
    trial: usize,
    round: usize,
    query: Option<QueryId>,
    rows: Vec<Vec<Vec<f64>>>,
    test: &Dataset,
    targets: &[QueryId],
) -> Result<MetricRecord> {
    let mut preds = Vec::with_capacity(rows.len() * targets.len());
    let mut truth = Vec::with_capacity(preds.capacity());
    let mut member_accuracy = Vec::with_capacity(rows.len());
    for (m, row) in rows.into_iter().enumerate() {
        let mut hits = 0;
        for (j, p) in row.into_iter().enumerate() {
            let y = truth_for(test, m, targets[j])?;
            hits += usize::from(argmax(&p) == y);
            preds.push(p);
            truth.push(y);
        }
        member_accuracy.push(hits as f64 / targets.len() as f64);
    }
    Ok(MetricRecord {
        method,
        budget,
        trial,
        round,
        query,
        accuracy: accuracy(&preds, &truth)?,
        perplexity: perplexity(&preds, &truth)?,
        brier: brier(&preds, &truth)?,
        member_accuracy,
    })
}

fn target_rows(
    state: &ElicitationState<f64>,
    route: EvalRoute,
    targets: &[QueryId],
) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..state.n_test())
        .map(|m| {
            let h = state.histories.member(m);
            let use_predictor = match route {
                EvalRoute::Hybrid => h.iter().any(|e| e.provenance == Provenance::Observed),
                EvalRoute::Pipeline => false,
                EvalRoute::History => !h.is_empty(),
            };
            let via_graph = state.graph.as_ref().filter(|_| !use_predictor);
            targets
                .iter()
                .map(|&q| match via_graph {
                    Some(ctx) => Ok(score(&ctx.embeddings, &ctx.params, ctx.offset + m, q).probs),
                    None => Ok(predict(&state.model, &state.posteriors[m], q)?.probs),
                })
                .collect()
        })
        .collect()
}

/// Plays `cfg.rounds` rounds of one method at one budget and records metrics
/// after every round, round 0 included.
pub fn run_method(
    cfg: &ExperimentConfig,
    setup: &TrialSetup,
    method: Method,
    budget: f64,
) -> Result<Vec<MetricRecord>> {
    let n_test = setup.test.n_members();
    let graph = if method.uses_graph() {
        Some(GraphContext::new(
            setup.graph.clone(),
            setup.gnn.params.clone(),
            setup.offset,
        )?)
    } else {
        None
    };
    let policy = PolicyConfig {
        believe_imputed: cfg.believe_imputed,
        soft_evidence: cfg.soft_evidence,
        impute_edges: cfg.impute_edges,
        eig_mode: cfg.eig_mode,
        total_rounds: Some(cfg.rounds),
        seed: setup.seed,
        ..PolicyConfig::default()
    };
    let targets = &setup.partition.targets;
    let mut state = ElicitationState::new(
        setup.model.clone(),
        n_test,
        setup.partition.candidates.clone(),
        targets.clone(),
        budget_count(budget, n_test),
        graph,
        policy,
    )?;
    state.set_starts(setup.starts.clone())?;
    let strategy = method.strategy(cfg.shortlist, cfg.rollouts);
    let mut out = Vec::with_capacity(cfg.rounds + 1);
    let rows = target_rows(&state, cfg.eval, targets)?;
    out.push(score_rows(
        method,
        budget,
        setup.trial,
        0,
        None,
        rows,
        &setup.test,
        targets,
    )?);
    for r in 1..=cfg.rounds {
        let log = run_round(&mut state, &strategy, &setup.test)?;
        let rows = target_rows(&state, cfg.eval, targets)?;
        out.push(score_rows(
            method,
            budget,
            setup.trial,
            r,
            Some(log.query),
            rows,
            &setup.test,
            targets,
        )?);
    }
    Ok(out)
}

/// Per-member target accuracy once all candidate answers are observed.
pub fn full_observation_accuracy(setup: &TrialSetup) -> Result<Vec<f64>> {
    let targets = &setup.partition.targets;
    (0..setup.test.n_members())
        .map(|m| {
            let mut s = setup.starts[m].clone();
            for &q in &setup.partition.candidates {
                s = posterior_update(&setup.model, &s, (q, truth_for(&setup.test, m, q)?))?;
            }
            let mut hits = 0;
            for &q in targets {
                hits += usize::from(
                    argmax(&predict(&setup.model, &s, q)?.probs) == truth_for(&setup.test, m, q)?,
                );
            }
            Ok(hits as f64 / targets.len() as f64)
        })
        .collect()
}

/// Per-member target accuracy of the graph network from demographics alone.
pub fn cold_start_accuracy(setup: &TrialSetup) -> Result<Vec<f64>> {
    let emb = message_pass(
        &setup.graph,
        &Adjacency::full(&setup.graph),
        &setup.gnn.params,
    )?;
    let targets = &setup.partition.targets;
    (0..setup.test.n_members())
        .map(|m| {
            let mut hits = 0;
            for &q in targets {
                let p = score(&emb, &setup.gnn.params, setup.offset + m, q);
                hits += usize::from(argmax(&p.probs) == truth_for(&setup.test, m, q)?);
            }
            Ok(hits as f64 / targets.len() as f64)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn run_trial(
    cfg: &ExperimentConfig,
    source: &DataSource,
    trial: usize,
) -> Result<(Vec<MetricRecord>, TrialSummary)> {
    let start = Instant::now();
    let setup = prepare_trial(cfg, source, trial)?;
    let train_ms = start.elapsed().as_secs_f64() * 1e3;
    let member_full = full_observation_accuracy(&setup)?;
    let member_cold = cold_start_accuracy(&setup)?;
    let mut records = Vec::new();
    for &method in &cfg.methods {
        for &budget in &cfg.budgets {
            records.extend(run_method(cfg, &setup, method, budget)?);
        }
    }
    let summary = TrialSummary {
        trial,
        seed: setup.seed,
        n_train: setup.train.n_members(),
        n_test: setup.test.n_members(),
        candidates: setup.partition.candidates.clone(),
        targets: setup.partition.targets.clone(),
        acc_full: mean(&member_full),
        acc_cold: mean(&member_cold),
        member_full,
        member_cold,
        train_ms,
    };
    Ok((records, summary))
}

/// Runs every trial (in parallel on the current rayon pool) and every
/// method × budget within a trial on the same data, partition and models.
pub fn run_experiment(cfg: &ExperimentConfig, source: &DataSource) -> Result<ExperimentResult> {
    cfg.validate()?;
    let per_trial: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, source, t))
        .collect::<Result<_>>()?;
    let mut out = ExperimentResult::default();
    for (records, summary) in per_trial {
        out.records.extend(records);
        out.trials.push(summary);
    }
    Ok(out)
}

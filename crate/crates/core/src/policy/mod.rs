//! Round engine: information-gain query choice, embedding-cluster respondent
//! choice, imputation and belief updates.

mod eig;
mod planner;
mod respondents;
mod round;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{message_pass, Adjacency, EmbeddingTable, GnnParameters, HeteroGraph};
use crate::lab::{best_extension, binomial, PairSet, SetFunctionOracle};
use crate::population::{InteractionHistory, MemberId, Provenance, QueryId};
use crate::predictive::{replay_history, LatentClassModel, PosteriorState};
use crate::scalar::Scalar;

pub use eig::{eig, eig_raw, eig_table, select_query};
pub use planner::{multi_step_plan, multi_step_plan_detailed, PlanReport};
pub use respondents::{kmeans, select_respondents, KMeans};
pub use round::{
    apply_round, plan_round, run_round, ImputeRule, ImputedResponse, ObservedResponse, QueryRule,
    RespondentRule, ResponseSource, RoundLog, RoundPlan, Strategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EigMode {
    /// Exact expectation over the candidate's choices.
    Exact,
    /// Monte Carlo over `draws` simulated answers per member.
    Sampled { draws: usize },
}

/// How an imputed answer enters a member's belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftEvidence {
    /// Likelihood `Σ_c q_c p(c | u)` under the imputed distribution `q`.
    #[default]
    Distribution,
    /// Likelihood `p(ĉ | u)^q_ĉ` of the imputed argmax `ĉ`.
    Tempered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Feed imputed answers to the predictor as soft evidence.
    pub believe_imputed: bool,
    pub soft_evidence: SoftEvidence,
    /// Also add imputed answers to the graph as response edges.
    pub impute_edges: bool,
    pub eig_mode: EigMode,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    /// Planned number of rounds; bounds the planner's lookahead. `None`
    /// looks ahead until the candidate pool runs out.
    pub total_rounds: Option<usize>,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            believe_imputed: true,
            soft_evidence: SoftEvidence::Distribution,
            impute_edges: false,
            eig_mode: EigMode::Exact,
            kmeans_iters: 100,
            kmeans_tol: 1e-8,
            total_rounds: None,
            seed: 0,
        }
    }
}

/// Graph, trained parameters and the current embeddings. Test members occupy
/// graph ids `offset..offset + n_test`.
#[derive(Debug, Clone)]
pub struct GraphContext<T: Scalar> {
    pub graph: HeteroGraph,
    pub params: GnnParameters<T>,
    pub offset: MemberId,
    pub embeddings: EmbeddingTable<T>,
}

impl<T: Scalar> GraphContext<T> {
    pub fn new(graph: HeteroGraph, params: GnnParameters<T>, offset: MemberId) -> Result<Self> {
        let embeddings = message_pass(&graph, &Adjacency::full(&graph), &params)?;
        Ok(Self {
            graph,
            params,
            offset,
            embeddings,
        })
    }

    pub fn refresh(&mut self) -> Result<()> {
        self.embeddings = message_pass(&self.graph, &Adjacency::full(&self.graph), &self.params)?;
        Ok(())
    }
}

/// Everything a round needs; test members are indexed `0..n_test`.
#[derive(Debug, Clone)]
pub struct ElicitationState<T: Scalar> {
    pub round: usize,
    pub model: LatentClassModel<T>,
    pub histories: InteractionHistory,
    pub posteriors: Vec<PosteriorState<T>>,
    /// Per-member belief before any round; the model prior unless set.
    pub starts: Vec<PosteriorState<T>>,
    pub asked: Vec<QueryId>,
    pub remaining: Vec<QueryId>,
    pub holdout: Vec<QueryId>,
    pub budget: usize,
    pub graph: Option<GraphContext<T>>,
    pub config: PolicyConfig,
}

impl<T: Scalar> ElicitationState<T> {
    pub fn new(
        model: LatentClassModel<T>,
        n_test: usize,
        candidates: Vec<QueryId>,
        holdout: Vec<QueryId>,
        budget: usize,
        graph: Option<GraphContext<T>>,
        config: PolicyConfig,
    ) -> Result<Self> {
        if budget == 0 || budget > n_test {
            return Err(Error::Budget(format!(
                "budget {budget} outside 1..={n_test}"
            )));
        }
        if holdout.is_empty() {
            return Err(Error::Config("holdout query set is empty".into()));
        }
        if candidates.iter().any(|q| holdout.contains(q)) {
            return Err(Error::Config(
                "candidate and holdout queries overlap".into(),
            ));
        }
        if let Some(&q) = candidates
            .iter()
            .chain(&holdout)
            .find(|&&q| q >= model.n_queries())
        {
            return Err(Error::Config(format!("query {q} unknown to the predictor")));
        }
        if let Some(g) = &graph {
            if g.offset + n_test > g.graph.n_members() {
                return Err(Error::Shape("graph lacks the test members".into()));
            }
        }
        let mut remaining = candidates;
        remaining.sort_unstable();
        remaining.dedup();
        let prior = model.initial_state();
        Ok(Self {
            round: 0,
            model,
            histories: InteractionHistory::new(n_test),
            posteriors: vec![prior.clone(); n_test],
            starts: vec![prior; n_test],
            asked: Vec::new(),
            remaining,
            holdout,
            budget,
            graph,
            config,
        })
    }

    pub fn n_test(&self) -> usize {
        self.posteriors.len()
    }

    /// Rounds left including the current one, never below 1.
    pub fn rounds_left(&self) -> usize {
        let left = match self.config.total_rounds {
            Some(t) => t.saturating_sub(self.round),
            None => self.remaining.len(),
        };
        left.min(self.remaining.len()).max(1)
    }

    /// Replaces the per-member starting beliefs and replays the histories.
    pub fn set_starts(&mut self, starts: Vec<PosteriorState<T>>) -> Result<()> {
        if starts.len() != self.n_test()
            || starts.iter().any(|s| s.0.len() != self.model.n_classes())
        {
            return Err(Error::Shape(
                "one class distribution per test member".into(),
            ));
        }
        self.starts = starts;
        self.rebuild_posteriors()
    }

    /// Recomputes every posterior from its starting belief and history.
    pub fn rebuild_posteriors(&mut self) -> Result<()> {
        for m in 0..self.n_test() {
            self.posteriors[m] = replay_history(
                &self.model,
                self.starts[m].clone(),
                self.histories.member(m),
                self.config.believe_imputed,
            )?;
        }
        Ok(())
    }

    /// Observed `(member, query)` pairs as a lab pair set (`n_queries` wide).
    pub fn observed_pairs(&self, n_queries: usize) -> PairSet {
        let mut s = PairSet::EMPTY;
        for m in 0..self.n_test() {
            for e in self.histories.member(m) {
                if e.provenance == Provenance::Observed && e.query < n_queries {
                    s = s.with(m * n_queries + e.query);
                }
            }
        }
        s
    }
}

/// Chosen query and respondents with the scores behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDecision {
    pub query: QueryId,
    pub respondents: Vec<MemberId>,
    /// `(query, EIG)` for every remaining candidate, ascending id.
    pub eig: Vec<(QueryId, f64)>,
    /// Cluster label per test member; empty when no clustering ran.
    pub clusters: Vec<usize>,
}

/// Largest `Σ_{j ≤ k} C(n, j) · |X|` the exact joint round will enumerate.
pub const JOINT_ROUND_LIMIT: u128 = 1_000_000;

/// Exact best `(R, x)` extension of the observed pairs under `oracle`, whose
/// members are the test members and whose queries are indexed by query id.
pub fn joint_greedy_round<T: Scalar>(
    state: &ElicitationState<T>,
    oracle: &(impl SetFunctionOracle + ?Sized),
) -> Result<RoundDecision> {
    let n = state.n_test();
    if oracle.n_members() != n {
        return Err(Error::Shape(format!(
            "oracle covers {} members, state has {n}",
            oracle.n_members()
        )));
    }
    if state.remaining.is_empty() {
        return Err(Error::PoolEmpty);
    }
    let k = state.budget;
    let subsets: u128 = (1..=k.min(n)).map(|j| binomial(n, j)).sum();
    let size = subsets * state.remaining.len() as u128;
    if size > JOINT_ROUND_LIMIT {
        return Err(Error::Scale(format!(
            "{size} (respondent set, query) pairs exceed {JOINT_ROUND_LIMIT}; use the two-stage round"
        )));
    }
    let nq = oracle.n_queries();
    let excluded: Vec<QueryId> = (0..nq).filter(|q| !state.remaining.contains(q)).collect();
    let base = state.observed_pairs(nq);
    let (step, _) = best_extension(oracle, base, &excluded, k).ok_or(Error::PoolEmpty)?;
    let eig = state
        .remaining
        .iter()
        .filter(|&&q| q < nq)
        .map(|&q| {
            let (_, g) = best_extension(
                oracle,
                base,
                &(0..nq).filter(|&x| x != q).collect::<Vec<_>>(),
                k,
            )
            .expect("query available");
            (q, g)
        })
        .collect();
    Ok(RoundDecision {
        query: step.query,
        respondents: (0..n).filter(|m| step.members >> m & 1 == 1).collect(),
        eig,
        clusters: Vec::new(),
    })
}

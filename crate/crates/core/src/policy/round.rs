use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::eig::{best_of, eig_table};
use super::planner::multi_step_plan;
use super::respondents::select_respondents;
use super::{ElicitationState, SoftEvidence};
use crate::error::{Error, Result};
use crate::graph::impute;
use crate::population::{ChoiceIndex, Dataset, MemberId, QueryId, ResponseMatrix};
use crate::predictive::{
    posterior_update, posterior_update_soft, posterior_update_weighted, predict,
};
use crate::rng::rng_for;
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QueryRule {
    /// Largest information gain.
    Eig,
    /// Uniform over the remaining pool.
    Random,
    /// Rollout lookahead over the top `shortlist` candidates.
    MultiStep { shortlist: usize, rollouts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RespondentRule {
    /// Cluster representatives in embedding space.
    Cluster,
    /// `k` members uniformly at random.
    Random,
    /// Ask nobody; rely on imputation alone.
    Nobody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeRule {
    /// Link prediction from the graph embeddings.
    Graph,
    /// Each member's own predictive distribution.
    Predictor,
    Nothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub query: QueryRule,
    pub respondents: RespondentRule,
    pub impute: ImputeRule,
}

impl Strategy {
    pub fn needs_graph(&self) -> bool {
        self.respondents == RespondentRule::Cluster || self.impute == ImputeRule::Graph
    }
}

/// Ground-truth answers for test members, indexed `0..n_test`.
pub trait ResponseSource {
    fn fetch(&self, member: MemberId, query: QueryId) -> Option<ChoiceIndex>;
}

impl ResponseSource for Dataset {
    fn fetch(&self, member: MemberId, query: QueryId) -> Option<ChoiceIndex> {
        self.response(member, query)
    }
}

impl ResponseSource for ResponseMatrix {
    fn fetch(&self, member: MemberId, query: QueryId) -> Option<ChoiceIndex> {
        self.get(member, query)
    }
}

impl<F: Fn(MemberId, QueryId) -> Option<ChoiceIndex>> ResponseSource for F {
    fn fetch(&self, member: MemberId, query: QueryId) -> Option<ChoiceIndex> {
        self(member, query)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedResponse {
    pub member: MemberId,
    pub choice: ChoiceIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedResponse {
    pub member: MemberId,
    pub choice: ChoiceIndex,
    pub probs: Vec<f64>,
}

/// One JSON record per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub query: QueryId,
    pub eig: Vec<(QueryId, f64)>,
    pub respondents: Vec<MemberId>,
    pub clusters: Vec<usize>,
    pub observed: Vec<ObservedResponse>,
    pub imputed: Vec<ImputedResponse>,
    pub wall_ms: f64,
}

fn pick_query<T: Scalar>(
    state: &ElicitationState<T>,
    rule: QueryRule,
    table: &[(QueryId, T)],
) -> Result<QueryId> {
    match rule {
        QueryRule::Eig => best_of(table).ok_or(Error::PoolEmpty),
        QueryRule::Random => {
            if state.remaining.is_empty() {
                return Err(Error::PoolEmpty);
            }
            let mut rng = rng_for(state.config.seed, "random-query", state.round as u64);
            let i = sample(&mut rng, state.remaining.len(), 1).index(0);
            Ok(state.remaining[i])
        }
        QueryRule::MultiStep {
            shortlist,
            rollouts,
        } => multi_step_plan(state, shortlist, rollouts),
    }
}

fn pick_respondents<T: Scalar>(
    state: &ElicitationState<T>,
    rule: RespondentRule,
) -> Result<(Vec<MemberId>, Vec<usize>)> {
    let n = state.n_test();
    match rule {
        RespondentRule::Cluster => select_respondents(state, state.budget),
        RespondentRule::Random => {
            let mut rng = rng_for(state.config.seed, "random-respondents", state.round as u64);
            let mut r = sample(&mut rng, n, state.budget).into_vec();
            r.sort_unstable();
            Ok((r, Vec::new()))
        }
        RespondentRule::Nobody => Ok((Vec::new(), Vec::new())),
    }
}

/// The decision half of a round: which query to ask and whom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: usize,
    pub query: QueryId,
    pub eig: Vec<(QueryId, f64)>,
    pub respondents: Vec<MemberId>,
    pub clusters: Vec<usize>,
}

/// Chooses the query and respondents for the current round without touching
/// the state.
pub fn plan_round<T: Scalar>(
    state: &ElicitationState<T>,
    strategy: &Strategy,
) -> Result<RoundPlan> {
    if state.remaining.is_empty() {
        return Err(Error::PoolEmpty);
    }
    if strategy.needs_graph() && state.graph.is_none() {
        return Err(Error::Precondition("strategy needs a graph context".into()));
    }
    let table = match strategy.query {
        QueryRule::Random => Vec::new(),
        _ => eig_table(state)?,
    };
    let query = pick_query(state, strategy.query, &table)?;
    let (respondents, clusters) = pick_respondents(state, strategy.respondents)?;
    Ok(RoundPlan {
        round: state.round,
        query,
        eig: table.iter().map(|&(q, v)| (q, v.as_f64())).collect(),
        respondents,
        clusters,
    })
}

/// Plays one round: choose a query and respondents, fetch their answers,
/// grow the graph, impute everyone else and update beliefs.
pub fn run_round<T: Scalar>(
    state: &mut ElicitationState<T>,
    strategy: &Strategy,
    source: &dyn ResponseSource,
) -> Result<RoundLog> {
    let start = Instant::now();
    let plan = plan_round(state, strategy)?;
    let mut log = apply_round(state, strategy, plan, source)?;
    log.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(log)
}

/// The update half of a round: fetch the planned respondents' answers, grow
/// the graph, impute everyone else and update beliefs.
pub fn apply_round<T: Scalar>(
    state: &mut ElicitationState<T>,
    strategy: &Strategy,
    plan: RoundPlan,
    source: &dyn ResponseSource,
) -> Result<RoundLog> {
    let start = Instant::now();
    if plan.round != state.round || !state.remaining.contains(&plan.query) {
        return Err(Error::Precondition(format!(
            "plan for round {} query {} does not fit the state at round {}",
            plan.round, plan.query, state.round
        )));
    }
    if strategy.needs_graph() && state.graph.is_none() {
        return Err(Error::Precondition("strategy needs a graph context".into()));
    }
    let mut seen = vec![false; state.n_test()];
    for &m in &plan.respondents {
        if m >= state.n_test() || std::mem::replace(&mut seen[m], true) {
            return Err(Error::Parameter(format!(
                "respondent {m} is out of range or repeated"
            )));
        }
    }
    let RoundPlan {
        query,
        eig,
        respondents,
        clusters,
        ..
    } = plan;

    let mut observed = Vec::with_capacity(respondents.len());
    for &m in &respondents {
        let choice = source
            .fetch(m, query)
            .ok_or(Error::DataCoverage { member: m, query })?;
        observed.push(ObservedResponse { member: m, choice });
    }
    for o in &observed {
        state.histories.record_observed(o.member, query, o.choice)?;
        state.posteriors[o.member] =
            posterior_update(&state.model, &state.posteriors[o.member], (query, o.choice))?;
    }
    if let Some(ctx) = state.graph.as_mut() {
        if !observed.is_empty() {
            let edges: Vec<_> = observed
                .iter()
                .map(|o| (ctx.offset + o.member, query, o.choice))
                .collect();
            ctx.graph.add_observations(&edges)?;
            ctx.refresh()?;
        }
    }

    let mut asked = vec![false; state.n_test()];
    respondents.iter().for_each(|&m| asked[m] = true);
    let others: Vec<MemberId> = (0..state.n_test()).filter(|&m| !asked[m]).collect();
    let imputed: Vec<ImputedResponse> = match strategy.impute {
        ImputeRule::Nothing => Vec::new(),
        ImputeRule::Graph => {
            let ctx = state.graph.as_ref().expect("checked above");
            let ids: Vec<MemberId> = others.iter().map(|&m| ctx.offset + m).collect();
            impute(&ctx.embeddings, &ctx.params, &ids, query)
                .into_iter()
                .map(|(v, (choice, dist))| ImputedResponse {
                    member: v - ctx.offset,
                    choice,
                    probs: dist.probs.iter().map(|p| p.as_f64()).collect(),
                })
                .collect()
        }
        ImputeRule::Predictor => others
            .iter()
            .map(|&m| {
                let dist = predict(&state.model, &state.posteriors[m], query)?;
                Ok(ImputedResponse {
                    member: m,
                    choice: argmax(&dist.probs),
                    probs: dist.probs.iter().map(|p| p.as_f64()).collect(),
                })
            })
            .collect::<Result<_>>()?,
    };
    for r in &imputed {
        let confidence = r.probs[r.choice];
        let update = match state.config.soft_evidence {
            SoftEvidence::Distribution => {
                state
                    .histories
                    .record_imputed_distribution(r.member, query, r.probs.clone())?;
                let w: Vec<T> = r.probs.iter().map(|&p| T::of(p)).collect();
                posterior_update_soft(&state.model, &state.posteriors[r.member], query, &w)
            }
            SoftEvidence::Tempered => {
                state
                    .histories
                    .record_imputed(r.member, query, r.choice, confidence)?;
                posterior_update_weighted(
                    &state.model,
                    &state.posteriors[r.member],
                    (query, r.choice),
                    T::of(confidence),
                )
            }
        };
        if state.config.believe_imputed {
            match update {
                Ok(next) => state.posteriors[r.member] = next,
                // evidence the predictor deems impossible is dropped
                Err(Error::DegenerateEvidence { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if state.config.impute_edges && !imputed.is_empty() {
        if let Some(ctx) = state.graph.as_mut() {
            let edges: Vec<_> = imputed
                .iter()
                .map(|r| (ctx.offset + r.member, query, r.choice))
                .collect();
            ctx.graph.add_observations(&edges)?;
            ctx.refresh()?;
        }
    }

    state.remaining.retain(|&q| q != query);
    state.asked.push(query);
    let log = RoundLog {
        round: state.round,
        query,
        eig,
        respondents,
        clusters,
        observed,
        imputed,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    state.round += 1;
    Ok(log)
}

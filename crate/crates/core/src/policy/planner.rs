use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::eig::{best_of, eig_table};
use super::ElicitationState;
use crate::error::{Error, Result};
use crate::population::QueryId;
use crate::predictive::{posterior_update, predict};
use crate::rng::{rng_for, Rng};
use crate::scalar::Scalar;

/// Per-candidate rollout utilities behind a lookahead decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub choice: QueryId,
    /// Rounds simulated per rollout, the current one included.
    pub depth: usize,
    pub shortlist: Vec<QueryId>,
    /// `utilities[i][r]`: summed information gain of rollout `r` for `shortlist[i]`.
    pub utilities: Vec<Vec<f64>>,
    pub mean_utility: Vec<f64>,
}

fn sample_choice<T: Scalar>(probs: &[T], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| p.as_f64() > 0.0).unwrap_or(0)
}

/// Every member answers `q` with a draw from its own predictive; beliefs
/// take the draws as hard evidence.
fn simulate_answers<T: Scalar>(
    sim: &mut ElicitationState<T>,
    q: QueryId,
    rng: &mut Rng,
) -> Result<()> {
    for s in sim.posteriors.iter_mut() {
        let dist = predict(&sim.model, s, q)?;
        let c = sample_choice(&dist.probs, rng);
        *s = posterior_update(&sim.model, s, (q, c))?;
    }
    Ok(())
}

fn take<T: Scalar>(sim: &mut ElicitationState<T>, q: QueryId) {
    sim.remaining.retain(|&x| x != q);
    sim.asked.push(q);
    sim.round += 1;
}

fn rollout<T: Scalar>(
    state: &ElicitationState<T>,
    x: QueryId,
    first: T,
    depth: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut sim = ElicitationState {
        round: state.round,
        model: state.model.clone(),
        histories: Default::default(),
        posteriors: state.posteriors.clone(),
        starts: Vec::new(),
        asked: state.asked.clone(),
        remaining: state.remaining.clone(),
        holdout: state.holdout.clone(),
        budget: state.budget,
        graph: None,
        config: state.config.clone(),
    };
    let mut utility = first.as_f64();
    let mut last = x;
    take(&mut sim, x);
    for _ in 1..depth {
        if sim.remaining.is_empty() {
            break;
        }
        simulate_answers(&mut sim, last, rng)?;
        let table = eig_table(&sim)?;
        let next = best_of(&table).ok_or(Error::PoolEmpty)?;
        utility += table
            .iter()
            .find(|(q, _)| *q == next)
            .map_or(0.0, |(_, v)| v.as_f64());
        take(&mut sim, next);
        last = next;
    }
    Ok(utility)
}

/// Lookahead query choice: shortlist the best candidates by information gain,
/// score each by the average summed gain of simulated trajectories, and
/// return the best (lowest id on ties).
pub fn multi_step_plan_detailed<T: Scalar>(
    state: &ElicitationState<T>,
    shortlist: usize,
    rollouts: usize,
) -> Result<PlanReport> {
    if state.remaining.is_empty() {
        return Err(Error::PoolEmpty);
    }
    if shortlist == 0 || rollouts == 0 {
        return Err(Error::Parameter(
            "shortlist and rollouts must be positive".into(),
        ));
    }
    let depth = state.rounds_left();
    let mut table = eig_table(state)?;
    table.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite gain")
            .then(a.0.cmp(&b.0))
    });
    table.truncate(shortlist);
    let mut utilities = Vec::with_capacity(table.len());
    let mut means = Vec::with_capacity(table.len());
    for &(x, gx) in &table {
        let us: Vec<f64> = (0..rollouts)
            .map(|r| {
                let stream = (state.round as u64) << 40 | (x as u64) << 20 | r as u64;
                rollout(
                    state,
                    x,
                    gx,
                    depth,
                    &mut rng_for(state.config.seed, "rollout", stream),
                )
            })
            .collect::<Result<_>>()?;
        // identical rollouts keep their exact value so depth 1 matches greedy
        let mean = if us.iter().all(|&u| u == us[0]) {
            us[0]
        } else {
            us.iter().sum::<f64>() / us.len() as f64
        };
        means.push(mean);
        utilities.push(us);
    }
    let scored: Vec<(QueryId, f64)> = table
        .iter()
        .map(|&(q, _)| q)
        .zip(means.iter().copied())
        .collect();
    let choice = best_of(&scored).expect("non-empty shortlist");
    Ok(PlanReport {
        choice,
        depth,
        shortlist: table.iter().map(|&(q, _)| q).collect(),
        utilities,
        mean_utility: means,
    })
}

pub fn multi_step_plan<T: Scalar>(
    state: &ElicitationState<T>,
    shortlist: usize,
    rollouts: usize,
) -> Result<QueryId> {
    Ok(multi_step_plan_detailed(state, shortlist, rollouts)?.choice)
}

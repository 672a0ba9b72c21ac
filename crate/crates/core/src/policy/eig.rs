use std::collections::HashMap;

use rand::Rng as _;

use super::{EigMode, ElicitationState};
use crate::error::{Error, Result};
use crate::population::QueryId;
use crate::predictive::{
    latent_uncertainty, posterior_update, predict, LatentClassModel, PosteriorState,
};
use crate::rng::rng_for;
use crate::scalar::Scalar;

/// Expected drop in held-out uncertainty for one member.
fn member_gain<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    x: QueryId,
    holdout: &[QueryId],
) -> Result<T> {
    let now = latent_uncertainty(m, s, holdout)?;
    let pred = predict(m, s, x)?;
    let mut after = T::zero();
    for (c, &pc) in pred.probs.iter().enumerate() {
        if pc <= T::zero() {
            continue;
        }
        let next = posterior_update(m, s, (x, c))?;
        after = after + pc * latent_uncertainty(m, &next, holdout)?;
    }
    Ok(now - after)
}

fn sampled_gain<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    x: QueryId,
    holdout: &[QueryId],
    draws: usize,
    rng: &mut crate::rng::Rng,
) -> Result<T> {
    let now = latent_uncertainty(m, s, holdout)?;
    let pred = predict(m, s, x)?;
    let mut after = T::zero();
    for _ in 0..draws {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = pred.probs.len() - 1;
        for (i, p) in pred.probs.iter().enumerate() {
            acc += p.as_f64();
            if u < acc {
                c = i;
                break;
            }
        }
        let next = posterior_update(m, s, (x, c))?;
        after = after + latent_uncertainty(m, &next, holdout)?;
    }
    Ok(now - after / T::of(draws.max(1) as f64))
}

fn key<T: Scalar>(s: &PosteriorState<T>) -> Vec<u64> {
    s.0.iter().map(|p| p.as_f64().to_bits()).collect()
}

/// Unclipped information gain of `x` summed over the test members.
pub fn eig_raw<T: Scalar>(state: &ElicitationState<T>, x: QueryId) -> Result<T> {
    if state.holdout.is_empty() {
        return Err(Error::Config("holdout query set is empty".into()));
    }
    if state.asked.contains(&x) {
        return Err(Error::Parameter(format!("query {x} was already asked")));
    }
    let m = &state.model;
    match state.config.eig_mode {
        EigMode::Exact => {
            // members with identical beliefs share one evaluation
            let mut cache: HashMap<Vec<u64>, T> = HashMap::new();
            let mut total = T::zero();
            for s in &state.posteriors {
                let k = key(s);
                let g = match cache.get(&k) {
                    Some(&g) => g,
                    None => {
                        let g = member_gain(m, s, x, &state.holdout)?;
                        cache.insert(k, g);
                        g
                    }
                };
                total = total + g;
            }
            Ok(total)
        }
        EigMode::Sampled { draws } => {
            let mut rng = rng_for(
                state.config.seed,
                "eig-sample",
                (state.round as u64) << 32 | x as u64,
            );
            let mut total = T::zero();
            for s in &state.posteriors {
                total = total + sampled_gain(m, s, x, &state.holdout, draws, &mut rng)?;
            }
            Ok(total)
        }
    }
}

/// Information gain clipped at zero.
pub fn eig<T: Scalar>(state: &ElicitationState<T>, x: QueryId) -> Result<T> {
    Ok(eig_raw(state, x)?.max(T::zero()))
}

/// `(query, EIG)` for every remaining candidate.
pub fn eig_table<T: Scalar>(state: &ElicitationState<T>) -> Result<Vec<(QueryId, T)>> {
    state
        .remaining
        .iter()
        .map(|&q| Ok((q, eig(state, q)?)))
        .collect()
}

/// Remaining candidate with the largest information gain, lowest id on ties.
pub fn select_query<T: Scalar>(state: &ElicitationState<T>) -> Result<QueryId> {
    let table = eig_table(state)?;
    best_of(&table).ok_or(Error::PoolEmpty)
}

pub(super) fn best_of<T: Scalar>(table: &[(QueryId, T)]) -> Option<QueryId> {
    let mut best: Option<(QueryId, T)> = None;
    for &(q, v) in table {
        let better = match best {
            None => true,
            Some((bq, bv)) => v > bv || (v == bv && q < bq),
        };
        if better {
            best = Some((q, v));
        }
    }
    best.map(|(q, _)| q)
}

//! Expectation-maximization for the latent-class mixture.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::latent::{FitMetadata, LatentClassModel};
use crate::error::{Error, Result};
use crate::population::Dataset;
use crate::rng::rng_for;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub n_classes: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the objective improves by less than this.
    pub tol: f64,
    /// Symmetric Dirichlet pseudo-count added to every table cell and the
    /// class prior (MAP-EM). Zero gives plain maximum likelihood.
    pub pseudo_count: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            seed: 0,
            max_iters: 500,
            tol: 1e-8,
            pseudo_count: 0.0,
        }
    }
}

/// Fitted model plus the objective after every iteration.
pub struct EmFit<T: Scalar> {
    pub model: LatentClassModel<T>,
    pub trace: Vec<f64>,
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Fits a `cfg.n_classes`-class model to every response in `data`.
///
/// Responsibilities start from a symmetric Dirichlet(1) draw per member. The
/// returned trace is non-decreasing (the log-likelihood, plus the Dirichlet
/// log-prior when `pseudo_count > 0`).
pub fn fit_em_traced<T: Scalar>(data: &Dataset, cfg: &EmConfig) -> Result<EmFit<T>> {
    let k = cfg.n_classes;
    if k < 1 {
        return Err(Error::Parameter("n_classes must be at least 1".into()));
    }
    if data.n_members() == 0 || data.responses.is_empty() {
        return Err(Error::Data("no responses to fit".into()));
    }
    let rows: Vec<Vec<(usize, usize)>> = (0..data.n_members())
        .map(|m| data.responses.member_row(m).collect())
        .collect();
    if let Some(m) = rows.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!(
            "member {} has no responses",
            data.members[m].key
        )));
    }
    let n = rows.len();
    let n_choices: Vec<usize> = data.queries.iter().map(|q| q.n_choices()).collect();
    let alpha = T::of(cfg.pseudo_count);

    let mut rng = rng_for(cfg.seed, "em-init", 0);
    let mut resp: Vec<T> = Vec::with_capacity(n * k);
    for _ in 0..n {
        let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        resp.extend(draws.iter().map(|&x| T::of(x / total)));
    }

    let mut prior = vec![T::zero(); k];
    // tables[q][c * k + u]
    let mut tables: Vec<Vec<T>> = n_choices.iter().map(|&c| vec![T::zero(); c * k]).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut log_joint = vec![T::zero(); k];

    loop {
        // M-step
        for p in prior.iter_mut() {
            *p = alpha;
        }
        for t in tables.iter_mut() {
            t.fill(alpha);
        }
        for (i, row) in rows.iter().enumerate() {
            let r = &resp[i * k..(i + 1) * k];
            for u in 0..k {
                prior[u] = prior[u] + r[u];
            }
            for &(q, c) in row {
                let cell = &mut tables[q][c * k..(c + 1) * k];
                for u in 0..k {
                    cell[u] = cell[u] + r[u];
                }
            }
        }
        let prior_total: T = prior.iter().copied().sum();
        for p in prior.iter_mut() {
            *p = *p / prior_total;
        }
        for (q, t) in tables.iter_mut().enumerate() {
            for u in 0..k {
                let mass: T = (0..n_choices[q]).map(|c| t[c * k + u]).sum();
                for c in 0..n_choices[q] {
                    t[c * k + u] = if mass > T::zero() {
                        t[c * k + u] / mass
                    } else {
                        T::one() / T::of(n_choices[q] as f64)
                    };
                }
            }
        }

        // E-step and objective
        let mut ll = T::zero();
        for (i, row) in rows.iter().enumerate() {
            for u in 0..k {
                log_joint[u] = prior[u].ln();
            }
            for &(q, c) in row {
                let cell = &tables[q][c * k..(c + 1) * k];
                for u in 0..k {
                    log_joint[u] = log_joint[u] + cell[u].ln();
                }
            }
            let lse = log_sum_exp(&log_joint);
            ll = ll + lse;
            for u in 0..k {
                resp[i * k + u] = (log_joint[u] - lse).exp();
            }
        }
        let mut objective = ll.as_f64();
        if cfg.pseudo_count > 0.0 {
            objective += cfg.pseudo_count
                * (prior.iter().map(|p| p.as_f64().ln()).sum::<f64>()
                    + tables
                        .iter()
                        .flatten()
                        .map(|p| p.as_f64().ln())
                        .sum::<f64>());
        }
        iterations += 1;
        let converged = trace
            .last()
            .map(|&prev: &f64| (objective - prev).abs() < cfg.tol)
            .unwrap_or(false);
        trace.push(objective);
        if converged || iterations >= cfg.max_iters {
            break;
        }
    }

    let rows_out: Vec<Vec<Vec<T>>> = (0..k)
        .map(|u| {
            tables
                .iter()
                .enumerate()
                .map(|(q, t)| (0..n_choices[q]).map(|c| t[c * k + u]).collect())
                .collect()
        })
        .collect();
    let mut model = LatentClassModel::new(prior, rows_out)?;
    model.meta = FitMetadata {
        seed: cfg.seed,
        iterations,
        log_likelihood: *trace.last().unwrap_or(&f64::NAN),
        pseudo_count: cfg.pseudo_count,
    };
    Ok(EmFit { model, trace })
}

pub fn fit_em<T: Scalar>(data: &Dataset, cfg: &EmConfig) -> Result<LatentClassModel<T>> {
    fit_em_traced(data, cfg).map(|f| f.model)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{ChoiceIndex, HistoryEntry, Provenance, QueryId};
use crate::scalar::{argmax, xlogx, Scalar};

/// Provenance of a fitted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub log_likelihood: f64,
    #[serde(default)]
    pub pseudo_count: f64,
}

/// Finite mixture over latent classes with class-conditional categorical
/// response tables: `p(y_1..y_T) = Σ_u μ(u) Π_t p(y_t | u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LatentClassModel<T: Scalar> {
    prior: Vec<T>,
    /// `tables[q][c * K + u] = p(c | u, q)`.
    tables: Vec<Vec<T>>,
    n_choices: Vec<usize>,
    #[serde(default)]
    pub meta: FitMetadata,
}

impl<T: Scalar> LatentClassModel<T> {
    /// Builds a model from a prior and `rows[u][q]` response rows.
    pub fn new(prior: Vec<T>, rows: Vec<Vec<Vec<T>>>) -> Result<Self> {
        let k = prior.len();
        if k == 0 {
            return Err(Error::Parameter(
                "model needs at least one latent class".into(),
            ));
        }
        if rows.len() != k {
            return Err(Error::Shape(format!(
                "{} response tables for {k} classes",
                rows.len()
            )));
        }
        let n_queries = rows[0].len();
        let n_choices: Vec<usize> = rows[0].iter().map(Vec::len).collect();
        let mut tables: Vec<Vec<T>> = n_choices.iter().map(|&c| vec![T::zero(); c * k]).collect();
        for (u, class_rows) in rows.iter().enumerate() {
            if class_rows.len() != n_queries {
                return Err(Error::Shape(format!(
                    "class {u} has {} queries",
                    class_rows.len()
                )));
            }
            for (q, row) in class_rows.iter().enumerate() {
                if row.len() != n_choices[q] {
                    return Err(Error::Shape(format!(
                        "class {u}, query {q}: row length {}",
                        row.len()
                    )));
                }
                for (c, &p) in row.iter().enumerate() {
                    tables[q][c * k + u] = p;
                }
            }
        }
        let model = Self {
            prior,
            tables,
            n_choices,
            meta: FitMetadata::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::normalization_tol();
        let k = self.prior.len();
        check_distribution(&self.prior, tol).map_err(|m| Error::Parameter(format!("prior {m}")))?;
        for (q, table) in self.tables.iter().enumerate() {
            if table.len() != self.n_choices[q] * k {
                return Err(Error::Shape(format!("query {q} table has wrong size")));
            }
            for u in 0..k {
                let row: Vec<T> = (0..self.n_choices[q]).map(|c| table[c * k + u]).collect();
                check_distribution(&row, tol)
                    .map_err(|m| Error::Parameter(format!("class {u}, query {q}: row {m}")))?;
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn n_queries(&self) -> usize {
        self.tables.len()
    }

    pub fn n_choices(&self, q: QueryId) -> usize {
        self.n_choices[q]
    }

    pub fn prior(&self) -> &[T] {
        &self.prior
    }

    /// `p(c | u, q)` for every class `u`.
    #[inline]
    pub fn likelihood(&self, q: QueryId, c: ChoiceIndex) -> &[T] {
        let k = self.prior.len();
        &self.tables[q][c * k..(c + 1) * k]
    }

    /// Response row `p(· | u, q)`.
    pub fn row(&self, u: usize, q: QueryId) -> Vec<T> {
        let k = self.prior.len();
        (0..self.n_choices[q])
            .map(|c| self.tables[q][c * k + u])
            .collect()
    }

    /// Posterior equal to the prior (empty history).
    pub fn initial_state(&self) -> PosteriorState<T> {
        PosteriorState(self.prior.clone())
    }

    fn check_query(&self, q: QueryId) -> Result<()> {
        if q >= self.tables.len() {
            return Err(Error::Parameter(format!("query {q} out of range")));
        }
        Ok(())
    }
}

fn check_distribution<T: Scalar>(v: &[T], tol: T) -> std::result::Result<(), String> {
    if v.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
        return Err("has negative or non-finite entries".into());
    }
    let s: T = v.iter().copied().sum();
    if (s - T::one()).abs() > tol {
        return Err(format!("sums to {s}"));
    }
    Ok(())
}

/// Belief over latent classes for one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PosteriorState<T: Scalar>(pub Vec<T>);

impl<T: Scalar> PosteriorState<T> {
    pub fn probs(&self) -> &[T] {
        &self.0
    }

    /// Entropy of the class belief itself.
    pub fn entropy(&self) -> T {
        -self.0.iter().map(|&p| xlogx(p)).sum::<T>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PredictiveDistribution<T: Scalar> {
    pub query: QueryId,
    pub probs: Vec<T>,
}

/// Bayes update on a hard observation.
pub fn posterior_update<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    obs: (QueryId, ChoiceIndex),
) -> Result<PosteriorState<T>> {
    posterior_update_weighted(m, s, obs, T::one())
}

/// Tempered update `s'(u) ∝ s(u) · p(c | u, q)^weight`; weight 1 is the exact
/// Bayes update, weights below 1 encode soft (imputed) evidence.
pub fn posterior_update_weighted<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    (q, c): (QueryId, ChoiceIndex),
    weight: T,
) -> Result<PosteriorState<T>> {
    m.check_query(q)?;
    if c >= m.n_choices(q) {
        return Err(Error::Parameter(format!(
            "choice {c} out of range for query {q}"
        )));
    }
    let lik = m.likelihood(q, c);
    let exact = weight == T::one();
    let mut next: Vec<T> =
        s.0.iter()
            .zip(lik)
            .map(|(&p, &l)| {
                let l = if exact {
                    l
                } else if l > T::zero() {
                    l.powf(weight)
                } else if weight > T::zero() {
                    T::zero()
                } else {
                    T::one()
                };
                p * l
            })
            .collect();
    let total: T = next.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::DegenerateEvidence {
            query: q,
            choice: c,
        });
    }
    for x in next.iter_mut() {
        *x = *x / total;
    }
    Ok(PosteriorState(next))
}

/// Soft-evidence update `s'(u) ∝ s(u) · Σ_c w_c p(c | u, q)`: the answer to
/// `q` is only known through the weights `w` over its choices.
pub fn posterior_update_soft<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    q: QueryId,
    weights: &[T],
) -> Result<PosteriorState<T>> {
    m.check_query(q)?;
    if weights.len() != m.n_choices(q) || weights.iter().any(|&w| !(w >= T::zero())) {
        return Err(Error::Parameter(format!(
            "need one non-negative weight per choice of query {q}"
        )));
    }
    let mut next = s.0.clone();
    for (u, x) in next.iter_mut().enumerate() {
        let l: T = weights
            .iter()
            .enumerate()
            .map(|(c, &w)| w * m.likelihood(q, c)[u])
            .sum();
        *x = *x * l;
    }
    let total: T = next.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::DegenerateEvidence {
            query: q,
            choice: argmax(weights),
        });
    }
    for x in next.iter_mut() {
        *x = *x / total;
    }
    Ok(PosteriorState(next))
}

/// Replays a member's history from the prior. Observed entries are hard
/// evidence. With `believe_imputed`, imputed entries count as soft evidence
/// through their stored distribution, or tempered by their confidence when
/// only the choice was kept; impossible ones are skipped.
pub fn posterior_from_history<T: Scalar>(
    m: &LatentClassModel<T>,
    history: &[HistoryEntry],
    believe_imputed: bool,
) -> Result<PosteriorState<T>> {
    replay_history(m, m.initial_state(), history, believe_imputed)
}

/// [`posterior_from_history`] starting from `start` instead of the prior.
pub fn replay_history<T: Scalar>(
    m: &LatentClassModel<T>,
    start: PosteriorState<T>,
    history: &[HistoryEntry],
    believe_imputed: bool,
) -> Result<PosteriorState<T>> {
    let mut s = start;
    for e in history {
        s = match e.provenance {
            Provenance::Observed => posterior_update(m, &s, (e.query, e.choice))?,
            // imputed evidence the model deems impossible is dropped
            Provenance::Imputed if believe_imputed => {
                let next = if e.probs.is_empty() {
                    posterior_update_weighted(m, &s, (e.query, e.choice), T::of(e.confidence))
                } else {
                    let w: Vec<T> = e.probs.iter().map(|&p| T::of(p)).collect();
                    posterior_update_soft(m, &s, e.query, &w)
                };
                match next {
                    Ok(next) => next,
                    Err(Error::DegenerateEvidence { .. }) => s,
                    Err(err) => return Err(err),
                }
            }
            Provenance::Imputed => s,
        };
    }
    Ok(s)
}

/// Posterior predictive `Σ_u s(u) p(· | u, q)`.
pub fn predict<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    q: QueryId,
) -> Result<PredictiveDistribution<T>> {
    m.check_query(q)?;
    let mut probs: Vec<T> = (0..m.n_choices(q))
        .map(|c| {
            m.likelihood(q, c)
                .iter()
                .zip(&s.0)
                .map(|(&l, &p)| l * p)
                .sum()
        })
        .collect();
    let total: T = probs.iter().copied().sum();
    for p in probs.iter_mut() {
        *p = *p / total;
    }
    Ok(PredictiveDistribution { query: q, probs })
}

/// Shannon entropy in nats.
pub fn entropy<T: Scalar>(p: &PredictiveDistribution<T>) -> T {
    -p.probs.iter().map(|&x| xlogx(x)).sum::<T>()
}

/// Summed predictive entropy over held-out queries: the per-member
/// uncertainty proxy driving information gain.
pub fn latent_uncertainty<T: Scalar>(
    m: &LatentClassModel<T>,
    s: &PosteriorState<T>,
    holdout: &[QueryId],
) -> Result<T> {
    if holdout.is_empty() {
        return Err(Error::Config("holdout query set is empty".into()));
    }
    let mut total = T::zero();
    for &q in holdout {
        total = total + entropy(&predict(m, s, q)?);
    }
    Ok(total)
}

/// Max-norm deviation of `E[predict_after(probe)]` from `predict_now(probe)`,
/// the expectation taken exactly over `next_query`'s choices. Zero for any
/// coherent Bayesian mixture.
pub fn martingale_check<T: Scalar>(
    m: &LatentClassModel<T>,
    history: &[HistoryEntry],
    next_query: QueryId,
    probe_query: QueryId,
) -> Result<T> {
    let s = posterior_from_history(m, history, true)?;
    let now = predict(m, &s, probe_query)?;
    let next = predict(m, &s, next_query)?;
    let mut drift = vec![T::zero(); now.probs.len()];
    for (c, &pc) in next.probs.iter().enumerate() {
        if pc <= T::zero() {
            continue;
        }
        let after = match posterior_update(m, &s, (next_query, c)) {
            Ok(a) => a,
            Err(Error::DegenerateEvidence { .. }) => continue,
            Err(e) => return Err(e),
        };
        let later = predict(m, &after, probe_query)?;
        for (d, (&a, &b)) in drift.iter_mut().zip(later.probs.iter().zip(&now.probs)) {
            *d = *d + pc * (a - b);
        }
    }
    Ok(drift.iter().fold(T::zero(), |acc, d| acc.max(d.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(rows0: Vec<Vec<f64>>, rows1: Vec<Vec<f64>>) -> LatentClassModel<f64> {
        LatentClassModel::new(vec![0.5, 0.5], vec![rows0, rows1]).unwrap()
    }

    #[test]
    fn rejects_unnormalized_tables() {
        assert!(LatentClassModel::new(
            vec![0.6, 0.5],
            vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]]
        )
        .is_err());
        assert!(LatentClassModel::new(vec![1.0], vec![vec![vec![0.7, 0.2]]]).is_err());
        assert!(LatentClassModel::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn identical_rows_leave_posterior_unchanged() {
        let m = two_class(vec![vec![0.3, 0.7]], vec![vec![0.3, 0.7]]);
        let s = posterior_update(&m, &m.initial_state(), (0, 1)).unwrap();
        assert_eq!(s.0, vec![0.5, 0.5]);
    }

    #[test]
    fn bayes_rule_arithmetic() {
        let m = two_class(vec![vec![0.9, 0.1]], vec![vec![0.1, 0.9]]);
        let s = posterior_update(&m, &m.initial_state(), (0, 0)).unwrap();
        assert!((s.0[0] - 0.9).abs() < 1e-15 && (s.0[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn impossible_evidence_is_degenerate() {
        let m = two_class(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]);
        assert!(matches!(
            posterior_update(&m, &m.initial_state(), (0, 1)),
            Err(Error::DegenerateEvidence { .. })
        ));
    }

    #[test]
    fn weighted_update_interpolates() {
        let m = two_class(vec![vec![0.8, 0.2]], vec![vec![0.2, 0.8]]);
        let s0 = m.initial_state();
        let none = posterior_update_weighted(&m, &s0, (0, 0), 0.0).unwrap();
        assert_eq!(none, s0);
        let half = posterior_update_weighted(&m, &s0, (0, 0), 0.5).unwrap();
        assert!((half.0[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn predict_point_mass_and_symmetry() {
        let m = two_class(
            vec![vec![1.0, 0.0], vec![0.2, 0.8]],
            vec![vec![0.0, 1.0], vec![0.6, 0.4]],
        );
        let p = predict(&m, &PosteriorState(vec![0.0, 1.0]), 1).unwrap();
        assert_eq!(p.probs, vec![0.6, 0.4]);
        let p = predict(&m, &m.initial_state(), 0).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
        assert!(predict(&m, &m.initial_state(), 2).is_err());
    }

    #[test]
    fn entropy_values() {
        let uniform = PredictiveDistribution {
            query: 0,
            probs: vec![0.25f64; 4],
        };
        assert!((entropy(&uniform) - 1.386294).abs() < 1e-6);
        let one_hot = PredictiveDistribution {
            query: 0,
            probs: vec![0.0, 1.0, 0.0],
        };
        assert_eq!(entropy(&one_hot), 0.0);
        // -0.9 ln 0.9 - 0.1 ln 0.1 evaluated independently
        let expected = -(0.9f64 * 0.9f64.ln()) - 0.1 * 0.1f64.ln();
        let p = PredictiveDistribution {
            query: 0,
            probs: vec![0.9, 0.1],
        };
        assert!((entropy(&p) - expected).abs() < 1e-15);
        assert!((entropy(&p) - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn latent_uncertainty_cases() {
        let m = two_class(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]);
        let point = PosteriorState(vec![1.0, 0.0]);
        assert_eq!(latent_uncertainty(&m, &point, &[0]).unwrap(), 0.0);
        let u = latent_uncertainty(&m, &m.initial_state(), &[0]).unwrap();
        assert!((u - 2f64.ln()).abs() < 1e-15);
        assert!(latent_uncertainty(&m, &point, &[]).is_err());
    }

    #[test]
    fn martingale_single_class_is_exactly_zero() {
        let m = LatentClassModel::new(vec![1.0], vec![vec![vec![0.3, 0.7], vec![0.1, 0.5, 0.4]]])
            .unwrap();
        assert_eq!(martingale_check(&m, &[], 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn martingale_skips_zero_probability_branch() {
        let m = two_class(
            vec![vec![1.0, 0.0], vec![0.3, 0.7]],
            vec![vec![1.0, 0.0], vec![0.9, 0.1]],
        );
        assert!(martingale_check(&m, &[], 0, 1).unwrap() <= 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let m = LatentClassModel::<f32>::new(
            vec![0.5, 0.5],
            vec![vec![vec![0.9, 0.1]], vec![vec![0.1, 0.9]]],
        )
        .unwrap();
        let s = posterior_update(&m, &m.initial_state(), (0, 0)).unwrap();
        assert!((s.0[0] - 0.9).abs() < 1e-6);
    }
}

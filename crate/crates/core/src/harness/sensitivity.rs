use serde::{Deserialize, Serialize};

use super::experiment::{
    cold_start_accuracy, fit_setup, full_observation_accuracy, FitOptions, MetricRecord,
};
use super::metrics::relative_recovery;
use crate::error::{Error, Result};
use crate::population::{Dataset, MemberId, QueryPartition};

/// Tier cut-offs, in percent of the population, from widest to narrowest.
pub const TIER_PERCENTS: [u32; 4] = [50, 30, 10, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub percent: u32,
    pub members: Vec<MemberId>,
}

/// Per-member `Acc_full - Acc_impute` with nested top-percent tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub scores: Vec<f64>,
    /// Members by descending score, lowest id first on ties.
    pub ranking: Vec<MemberId>,
    pub tiers: Vec<Tier>,
}

impl SensitivityTable {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut ranking: Vec<MemberId> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let n = scores.len();
        let tiers = TIER_PERCENTS
            .iter()
            .map(|&percent| {
                let size =
                    ((percent as f64 / 100.0 * n as f64).round() as usize).clamp(n.min(1), n);
                let mut members = ranking[..size].to_vec();
                members.sort_unstable();
                Tier { percent, members }
            })
            .collect();
        Self {
            scores,
            ranking,
            tiers,
        }
    }

    /// Gap between the two accuracy vectors, member by member.
    pub fn from_accuracies(full: &[f64], impute: &[f64]) -> Result<Self> {
        if full.len() != impute.len() {
            return Err(Error::Shape("accuracy vectors differ in length".into()));
        }
        Ok(Self::from_scores(
            full.iter().zip(impute).map(|(f, i)| f - i).collect(),
        ))
    }

    pub fn tier(&self, percent: u32) -> Option<&[MemberId]> {
        self.tiers
            .iter()
            .find(|t| t.percent == percent)
            .map(|t| t.members.as_slice())
    }
}

/// Sensitivity averaged over fits under each seed. Full observation reveals
/// every candidate answer to the predictor; imputation is the graph
/// network's cold-start guess.
pub fn sensitivity_table(
    train: &Dataset,
    test: &Dataset,
    partition: &QueryPartition,
    fit: &FitOptions,
    seeds: &[u64],
) -> Result<SensitivityTable> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    for m in 0..test.n_members() {
        for &q in partition.candidates.iter().chain(&partition.targets) {
            if test.response(m, q).is_none() {
                return Err(Error::DataCoverage {
                    member: m,
                    query: q,
                });
            }
        }
    }
    let mut scores = vec![0.0; test.n_members()];
    for (i, &seed) in seeds.iter().enumerate() {
        let setup = fit_setup(i, seed, train.clone(), test.clone(), partition.clone(), fit)?;
        let full = full_observation_accuracy(&setup)?;
        let cold = cold_start_accuracy(&setup)?;
        for (s, (f, c)) in scores.iter_mut().zip(full.iter().zip(&cold)) {
            *s += (f - c) / seeds.len() as f64;
        }
    }
    Ok(SensitivityTable::from_scores(scores))
}

fn mean_over(xs: &[f64], members: &[MemberId]) -> f64 {
    members.iter().map(|&m| xs[m]).sum::<f64>() / members.len() as f64
}

/// Relative recovery restricted to `members`, from per-member accuracies at
/// round `t`, round 0 and under full observation.
pub fn tier_recovery(
    at_t: &MetricRecord,
    at_0: &MetricRecord,
    full: &[f64],
    members: &[MemberId],
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Metric("empty member set".into()));
    }
    relative_recovery(
        mean_over(&at_t.member_accuracy, members),
        mean_over(&at_0.member_accuracy, members),
        mean_over(full, members),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers_are_nested_and_sized() {
        let scores: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let t = SensitivityTable::from_scores(scores);
        let sizes: Vec<usize> = t.tiers.iter().map(|t| t.members.len()).collect();
        assert_eq!(sizes, vec![20, 12, 4, 2]);
        for w in t.tiers.windows(2) {
            assert!(w[1].members.iter().all(|m| w[0].members.contains(m)));
        }
    }

    #[test]
    fn equal_accuracies_give_zero_scores() {
        let t = SensitivityTable::from_accuracies(&[0.5, 0.2, 1.0], &[0.5, 0.2, 1.0]).unwrap();
        assert!(t.scores.iter().all(|&s| s == 0.0));
        assert_eq!(t.ranking, vec![0, 1, 2]);
    }
}

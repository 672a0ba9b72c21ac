mod common;

use common::{batch_posterior, copula_trend, random_model};
use group_elicit::population::InteractionHistory;
use group_elicit::predictive::{
    entropy, fit_em, latent_uncertainty, martingale_check, posterior_from_history,
    posterior_update, posterior_update_soft, predict, CopulaPredictor, EmConfig, Grid, GridDensity,
    LatentClassModel, PosteriorState, PredictiveDistribution,
};
use group_elicit::{Error, LatentClassModelF32};
use proptest::prelude::*;

const CHOICES: [usize; 5] = [2, 3, 4, 2, 3];

fn history_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    // distinct queries, choice drawn below the query's arity
    Just((0..CHOICES.len()).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_flat_map(|qs| {
            let picks: Vec<_> = qs.iter().map(|&q| (Just(q), 0..CHOICES[q])).collect();
            (picks, 0..=CHOICES.len())
        })
        .prop_map(|(picks, len)| picks.into_iter().take(len).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sequential_updates_equal_batch_bayes(
        seed in 0u64..10_000,
        k in 1usize..5,
        obs in history_strategy(),
    ) {
        let (m, prior, rows) = random_model(seed, k, &CHOICES);
        let oracle = batch_posterior(&prior, &rows, &obs);
        let forward = obs.iter().try_fold(m.initial_state(), |s, &o| posterior_update(&m, &s, o)).unwrap();
        let backward = obs.iter().rev().try_fold(m.initial_state(), |s, &o| posterior_update(&m, &s, o)).unwrap();
        for u in 0..k {
            prop_assert!((forward.0[u] - oracle[u]).abs() <= 1e-12);
            prop_assert!((backward.0[u] - oracle[u]).abs() <= 1e-12);
        }
        prop_assert!((forward.0.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn two_class_martingale_holds(
        seed in 0u64..10_000,
        obs in history_strategy(),
        next in 0usize..5,
        probe in 0usize..5,
    ) {
        let (m, _, _) = random_model(seed, 2, &CHOICES);
        let mut h = InteractionHistory::new(1);
        for &(q, c) in &obs {
            h.record_observed(0, q, c).unwrap();
        }
        prop_assert!(martingale_check(&m, h.member(0), next, probe).unwrap() <= 1e-12);
    }

    #[test]
    fn predictive_rows_are_normalized(seed in 0u64..10_000, k in 1usize..6, q in 0usize..5) {
        let (m, _, _) = random_model(seed, k, &CHOICES);
        let p = predict(&m, &m.initial_state(), q).unwrap();
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn soft_update_matches_marginal_likelihood(
        seed in 0u64..10_000,
        q in 0usize..5,
        raw in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let (m, prior, rows) = random_model(seed, 3, &CHOICES);
        let w = &raw[..CHOICES[q]];
        prop_assume!(w.iter().sum::<f64>() > 1e-3);
        let got = posterior_update_soft(&m, &m.initial_state(), q, w).unwrap();
        let joint: Vec<f64> = (0..3)
            .map(|u| prior[u] * w.iter().enumerate().map(|(c, x)| x * rows[u][q][c]).sum::<f64>())
            .collect();
        let z: f64 = joint.iter().sum();
        for u in 0..3 {
            prop_assert!((got.0[u] - joint[u] / z).abs() <= 1e-12);
        }
    }
}

#[test]
fn three_class_predictive_matches_direct_sum() {
    let (m, _, rows) = random_model(11, 3, &CHOICES);
    let s = PosteriorState(vec![0.2, 0.5, 0.3]);
    for q in 0..CHOICES.len() {
        let p = predict(&m, &s, q).unwrap();
        for c in 0..CHOICES[q] {
            let oracle: f64 = (0..3).map(|u| s.0[u] * rows[u][q][c]).sum();
            assert!((p.probs[c] - oracle).abs() <= 1e-12);
        }
    }
}

#[test]
fn entropy_of_ninety_ten() {
    let p = PredictiveDistribution {
        query: 0,
        probs: vec![0.9f64, 0.1],
    };
    let oracle = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
    assert!((entropy(&p) - 0.325083).abs() < 1e-6);
    assert!((entropy(&p) - oracle).abs() < 1e-15);
}

#[test]
fn holdout_uncertainty_is_per_query_entropy_sum() {
    let (m, _, rows) = random_model(5, 2, &[3, 2, 4]);
    let s = PosteriorState(vec![0.35, 0.65]);
    let oracle: f64 = (0..3)
        .map(|q| {
            let n = rows[0][q].len();
            -(0..n)
                .map(|c| {
                    let p = s.0[0] * rows[0][q][c] + s.0[1] * rows[1][q][c];
                    if p > 0.0 {
                        p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum();
    assert!((latent_uncertainty(&m, &s, &[0, 1, 2]).unwrap() - oracle).abs() <= 1e-12);
}

#[test]
fn soft_evidence_limits() {
    let (m, _, _) = random_model(3, 3, &CHOICES);
    let s = m.initial_state();
    // one-hot weights are a hard observation
    let hard = posterior_update(&m, &s, (2, 1)).unwrap();
    let soft = posterior_update_soft(&m, &s, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
    for (a, b) in hard.0.iter().zip(&soft.0) {
        assert!((a - b).abs() <= 1e-15);
    }
    // equal weights carry no information
    let flat = posterior_update_soft(&m, &s, 2, &[0.25; 4]).unwrap();
    for (a, b) in flat.0.iter().zip(&s.0) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(matches!(
        posterior_update_soft(&m, &s, 2, &[0.5, 0.5]),
        Err(Error::Parameter(_))
    ));
    let certain = LatentClassModel::new(
        vec![0.5, 0.5],
        vec![vec![vec![1.0, 0.0, 0.0]], vec![vec![1.0, 0.0, 0.0]]],
    )
    .unwrap();
    assert!(matches!(
        posterior_update_soft(&certain, &certain.initial_state(), 0, &[0.0, 0.2, 0.8]),
        Err(Error::DegenerateEvidence {
            query: 0,
            choice: 2
        })
    ));
}

#[test]
fn replay_uses_stored_distributions() {
    let (m, _, _) = random_model(8, 3, &CHOICES);
    let mut h = InteractionHistory::new(1);
    h.record_observed(0, 0, 1).unwrap();
    h.record_imputed_distribution(0, 2, vec![0.1, 0.6, 0.2, 0.1])
        .unwrap();
    let e = &h.member(0)[1];
    assert_eq!((e.choice, e.confidence), (1, 0.6));
    let s = posterior_update(&m, &m.initial_state(), (0, 1)).unwrap();
    let s = posterior_update_soft(&m, &s, 2, &[0.1, 0.6, 0.2, 0.1]).unwrap();
    assert_eq!(posterior_from_history(&m, h.member(0), true).unwrap(), s);
    let hard_only = posterior_from_history(&m, h.member(0), false).unwrap();
    assert_eq!(
        hard_only,
        posterior_update(&m, &m.initial_state(), (0, 1)).unwrap()
    );
}

#[test]
fn copula_moves_toward_the_planted_mixture() {
    for seed in 0..3 {
        let (first, last, running_min_monotone) = copula_trend(seed, 2000, 0.8, 0.3);
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert!(running_min_monotone);
    }
}

#[test]
fn copula_updates_keep_unit_mass() {
    let p0 = GridDensity::from_fn(Grid::standard(), common::gauss(0.3, 1.4)).unwrap();
    let mut c = CopulaPredictor::new(0.7, 0.35, p0).unwrap();
    for (t, y) in [-2.0, 0.5, 3.1, -0.2, 5.9, -5.9].into_iter().enumerate() {
        c = c.update(y, t).unwrap();
        assert!((c.density.mass() - 1.0).abs() <= 1e-6);
        assert!(c.density.values.iter().all(|&v| v >= 0.0));
    }
    assert_eq!(c.observed, 6);
}

#[test]
fn em_runs_in_single_precision() {
    let pop = group_elicit::harness::generate_population(
        &group_elicit::harness::SyntheticSpec::two_block(200, 6, 0.05, 2),
    )
    .unwrap();
    let cfg = EmConfig {
        n_classes: 2,
        seed: 1,
        ..EmConfig::default()
    };
    let m: LatentClassModelF32 = fit_em(&pop.dataset, &cfg).unwrap();
    let s = m.initial_state();
    assert!((s.0.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    let p = predict(&m, &s, 0).unwrap();
    assert!((p.probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
}

mod common;

use common::random_model;
use group_elicit::lab::{
    adversarial_search, brute_force_opt, cardinality_greedy, check_assumption1, coverage_corpus,
    joint_greedy, joint_greedy_bound, random_coverage_instance, two_stage_greedy,
    verify_cardinality_greedy, verify_theorem1, verify_theorem2, CoverageOracle, EntropyGainOracle,
    PairSet, SetFunctionOracle, SquareOracle, ViolationKind,
};
use group_elicit::Error;

/// Recursive search over rounds that enumerates member subsets as index
/// lists rather than bit masks.
fn recursive_opt(o: &dyn SetFunctionOracle, t: usize, k: usize) -> f64 {
    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if !cur.is_empty() {
                out.push(cur.clone());
            }
            if cur.len() == k {
                return;
            }
            for m in start..n {
                cur.push(m);
                rec(m + 1, n, k, cur, out);
                cur.pop();
            }
        }
        rec(0, n, k, &mut Vec::new(), &mut out);
        out
    }
    fn go(
        o: &dyn SetFunctionOracle,
        s: PairSet,
        used: &mut Vec<usize>,
        left: usize,
        subs: &[Vec<usize>],
    ) -> f64 {
        if left == 0 {
            return o.value(s);
        }
        let mut best = f64::NEG_INFINITY;
        for q in 0..o.n_queries() {
            if used.contains(&q) {
                continue;
            }
            used.push(q);
            for r in subs {
                let next = r.iter().fold(s, |acc, &m| acc.with(o.pair(m, q)));
                best = best.max(go(o, next, used, left - 1, subs));
            }
            used.pop();
        }
        best
    }
    let subs = subsets(o.n_members(), k);
    go(o, PairSet::EMPTY, &mut Vec::new(), t, &subs)
}

#[test]
fn brute_force_agrees_with_recursive_enumeration() {
    let mut checked = 0;
    for seed in 0..400 {
        let (o, _, _) = random_coverage_instance(seed);
        if o.n_members() != 3 || o.n_queries() != 3 {
            continue;
        }
        let (_, opt) = brute_force_opt(&o, 2, 2).unwrap();
        assert_eq!(opt, recursive_opt(&o, 2, 2), "instance {seed}");
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn coverage_corpus_meets_both_bounds() {
    let records = coverage_corpus(17, 400).unwrap();
    assert_eq!(records.len(), 400);
    for r in &records {
        assert!(r.certified);
        assert!(r.pass_joint && r.pass_2stage && r.pass_inner, "{r:?}");
        if r.rounds == 1 {
            assert!(r.joint_dominates, "{r:?}");
        }
    }
}

#[test]
fn adversarial_search_stays_under_the_joint_bound() {
    let (ratio, o, t, k) = adversarial_search(3, 8, 40).unwrap();
    assert!(ratio >= 1.0);
    assert!(ratio <= joint_greedy_bound());
    assert!(verify_theorem1(&o, t, k).unwrap().pass);
}

#[test]
fn greedy_values_never_decrease() {
    for seed in 0..50 {
        let (o, t, k) = random_coverage_instance(seed);
        for run in [
            joint_greedy(&o, t, k).unwrap(),
            two_stage_greedy(&o, t, k).unwrap(),
        ] {
            assert!(run.values.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(run.steps.len(), t);
            let mut qs: Vec<_> = run.steps.iter().map(|s| s.query).collect();
            qs.sort_unstable();
            qs.dedup();
            assert_eq!(qs.len(), t);
        }
    }
}

#[test]
fn optimum_ignores_pair_order() {
    for seed in 0..40 {
        let (o, t, k) = random_coverage_instance(seed);
        let (nm, nq) = (o.n_members(), o.n_queries());
        // reverse both the member and the query order
        let masks: Vec<u64> = (0..nm * nq)
            .map(|i| {
                let (m, q) = (i / nq, i % nq);
                o.masks()[(nm - 1 - m) * nq + (nq - 1 - q)]
            })
            .collect();
        let r = CoverageOracle::from_masks(nm, nq, masks).unwrap();
        assert_eq!(
            brute_force_opt(&o, t, k).unwrap().1,
            brute_force_opt(&r, t, k).unwrap().1
        );
    }
}

#[test]
fn inner_greedy_bound() {
    for seed in 0..60 {
        let (o, _, _) = random_coverage_instance(seed);
        let one = verify_cardinality_greedy(&o, 0, 1, PairSet::EMPTY).unwrap();
        assert_eq!(one.f_opt, one.f_greedy);
        let two = verify_cardinality_greedy(&o, o.n_queries() - 1, 2, PairSet::EMPTY).unwrap();
        assert!(two.pass);
    }
    let sq = SquareOracle::new(2, 2).unwrap();
    assert!(matches!(
        verify_cardinality_greedy(&sq, 0, 1, PairSet::EMPTY),
        Err(Error::Precondition(_))
    ));
    assert_eq!(cardinality_greedy(&sq, 0, 2, PairSet::EMPTY), 0b11);
}

/// Exhaustive lattice check written against pair indices directly.
fn lattice_violations(o: &dyn SetFunctionOracle) -> (bool, bool) {
    let n = o.n_pairs();
    let (mut mono, mut sub) = (true, true);
    for a in 0u128..1 << n {
        let sa = PairSet(a);
        for i in 0..n {
            if a >> i & 1 == 1 {
                continue;
            }
            let gi = o.value(sa.with(i)) - o.value(sa);
            mono &= gi >= -1e-9;
            for j in 0..n {
                if j == i || a >> j & 1 == 1 {
                    continue;
                }
                let gi_after = o.value(sa.with(j).with(i)) - o.value(sa.with(j));
                sub &= gi_after <= gi + 1e-9;
            }
        }
    }
    (mono, sub)
}

#[test]
fn entropy_oracle_is_reported_truthfully() {
    let mut certified = 0;
    for seed in 0..12 {
        let (m, _, _) = random_model(seed, 2, &[2, 2, 3]);
        let o = EntropyGainOracle::new(m, 3, vec![0, 1, 2]).unwrap();
        let report = check_assumption1(&o).unwrap();
        let (mono, sub) = lattice_violations(&o);
        assert_eq!(
            (report.monotone, report.submodular),
            (mono, sub),
            "model {seed}"
        );
        assert_eq!(report.holds(), o.certified());
        for w in &report.witnesses {
            assert!(w.excess > 0.0);
            let base = o.value(w.base);
            let gain = o.value(w.base.with(w.first)) - base;
            match w.kind {
                ViolationKind::Monotonicity => assert!(gain < 0.0),
                ViolationKind::Submodularity => {
                    let j = w.second.unwrap();
                    let later = o.value(w.base.with(j).with(w.first)) - o.value(w.base.with(j));
                    assert!(later > gain);
                }
            }
        }
        if o.certified() {
            certified += 1;
            let t2 = verify_theorem2(&o, 1, 2).unwrap();
            assert!(t2.pass);
            let joint = joint_greedy(&o, 1, 2).unwrap().value;
            assert!(t2.f_greedy <= joint + 1e-12);
        } else {
            assert!(matches!(
                verify_theorem2(&o, 1, 2),
                Err(Error::Precondition(_))
            ));
        }
    }
    eprintln!("{certified}/12 entropy-gain instances certified");
}

use rand::Rng as _;

use super::ElicitationState;
use crate::error::{Error, Result};
use crate::population::MemberId;
use crate::rng::{rng_for, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centroids.iter().enumerate() {
        let d = sq_dist(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Lloyd iterations from a k-means++ seeding. Stops after `max_iters` or once
/// no centroid moves by `tol` or more. Ties go to the lowest cluster index;
/// empty clusters keep their centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, tol: f64, rng: &mut Rng) -> KMeans {
    let n = points.len();
    assert!(k >= 1 && k <= n, "need 1 ≤ k ≤ n");
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && target < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive mass"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let dim = points[0].len();
    let mut assignment = vec![0; n];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        if shift < tol {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids);
    }
    KMeans {
        centroids,
        assignment,
        iterations,
    }
}

/// One representative per embedding cluster: the member closest to each
/// centroid (lowest id on ties). When clusters collapse the set is topped up
/// round-robin with the next-closest unselected member of each non-empty
/// cluster's centroid. Returns ascending ids and the cluster labels.
pub fn select_respondents<T: Scalar>(
    state: &ElicitationState<T>,
    k: usize,
) -> Result<(Vec<MemberId>, Vec<usize>)> {
    let n = state.n_test();
    if k == 0 || k > n {
        return Err(Error::Budget(format!("budget {k} outside 1..={n}")));
    }
    let ctx = state.graph.as_ref().ok_or_else(|| {
        Error::Precondition("respondent clustering needs graph embeddings".into())
    })?;
    if k == n {
        return Ok(((0..n).collect(), (0..n).collect()));
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|m| {
            ctx.embeddings
                .member(ctx.offset + m)
                .iter()
                .map(|x| x.as_f64())
                .collect()
        })
        .collect();
    let mut rng = rng_for(state.config.seed, "kmeans", state.round as u64);
    let km = kmeans(
        &points,
        k,
        state.config.kmeans_iters,
        state.config.kmeans_tol,
        &mut rng,
    );

    let mut selected = vec![false; n];
    let mut picked = Vec::with_capacity(k);
    let closest_unselected =
        |c: usize, selected: &[bool], only_members: bool| -> Option<MemberId> {
            let mut best: Option<(MemberId, f64)> = None;
            for m in 0..n {
                if selected[m] || (only_members && km.assignment[m] != c) {
                    continue;
                }
                let d = sq_dist(&points[m], &km.centroids[c]);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((m, d));
                }
            }
            best.map(|(m, _)| m)
        };
    let live: Vec<usize> = (0..k).filter(|&c| km.assignment.contains(&c)).collect();
    for &c in &live {
        if let Some(m) = closest_unselected(c, &selected, true) {
            selected[m] = true;
            picked.push(m);
        }
    }
    let mut turn = 0;
    while picked.len() < k {
        let c = live[turn % live.len()];
        turn += 1;
        if let Some(m) = closest_unselected(c, &selected, false) {
            selected[m] = true;
            picked.push(m);
        }
    }
    picked.sort_unstable();
    Ok((picked, km.assignment))
}

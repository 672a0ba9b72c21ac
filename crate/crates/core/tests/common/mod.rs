#![allow(dead_code)]

use group_elicit::predictive::LatentClassModel;
use group_elicit::rng::{rng_for, Rng};
use rand::Rng as _;

pub fn simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random model plus its `rows[u][q]` tables for oracle code.
pub fn random_model(
    seed: u64,
    k: usize,
    choices: &[usize],
) -> (LatentClassModel<f64>, Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let mut rng = rng_for(seed, "test-model", 0);
    let prior = simplex(&mut rng, k);
    let rows: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| choices.iter().map(|&c| simplex(&mut rng, c)).collect())
        .collect();
    let m = LatentClassModel::new(prior.clone(), rows.clone()).unwrap();
    (m, prior, rows)
}

/// Class posterior by direct enumeration of the product likelihood.
pub fn batch_posterior(prior: &[f64], rows: &[Vec<Vec<f64>>], obs: &[(usize, usize)]) -> Vec<f64> {
    let joint: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(u, &p)| p * obs.iter().map(|&(q, c)| rows[u][q][c]).product::<f64>())
        .collect();
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|x| x / z).collect()
}

pub fn gauss(mu: f64, sd: f64) -> impl Fn(f64) -> f64 {
    move |y| (-0.5 * ((y - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Planted two-bump target and a wide starting density.
pub fn planted_mixture() -> (impl Fn(f64) -> f64, impl Fn(f64) -> f64) {
    let (a, b) = (gauss(-1.5, 0.7), gauss(1.5, 0.7));
    (move |y| 0.5 * a(y) + 0.5 * b(y), gauss(0.0, 2.0))
}

pub fn draw_planted(rng: &mut Rng) -> f64 {
    use rand_distr::{Distribution, Normal};
    let mu = if rng.random::<bool>() { 1.5 } else { -1.5 };
    Normal::new(mu, 0.7).unwrap().sample(rng)
}

/// `(initial, final, running-minimum non-increasing)` Hellinger distances to
/// the planted target after `n` copula updates.
pub fn copula_trend(seed: u64, n: usize, rho: f64, a: f64) -> (f64, f64, bool) {
    use group_elicit::predictive::{hellinger, CopulaPredictor, Grid, GridDensity};
    let (f0, p0) = planted_mixture();
    let grid = Grid::standard();
    let truth = GridDensity::from_fn(grid, f0).unwrap();
    let mut c = CopulaPredictor::new(rho, a, GridDensity::from_fn(grid, p0).unwrap()).unwrap();
    let first = hellinger(&c.density, &truth).unwrap();
    let mut rng = rng_for(seed, "planted-draws", 0);
    let mut running = first;
    let mut monotone = true;
    for t in 0..n {
        let y = draw_planted(&mut rng).clamp(-6.0, 6.0);
        c = c.update(y, t).unwrap();
        let h = hellinger(&c.density, &truth).unwrap();
        let next = running.min(h);
        monotone &= next <= running;
        running = next;
    }
    (first, hellinger(&c.density, &truth).unwrap(), monotone)
}

/// Random schema and members; each (member, query) answered with
/// probability `fill`.
pub fn random_dataset(
    seed: u64,
    n_members: usize,
    n_attrs: usize,
    n_queries: usize,
    fill: f64,
) -> group_elicit::population::Dataset {
    use group_elicit::population::{Attribute, Dataset, Member, Query, ResponseMatrix};
    let mut rng = rng_for(seed, "test-dataset", 0);
    let attributes: Vec<Attribute> = (0..n_attrs)
        .map(|a| Attribute {
            name: format!("a{a}"),
            bins: (0..rng.random_range(2..4))
                .map(|b| format!("b{b}"))
                .collect(),
        })
        .collect();
    let queries: Vec<Query> = (0..n_queries)
        .map(|q| Query {
            id: q,
            key: format!("q{q}"),
            text: String::new(),
            choices: (0..rng.random_range(2..5))
                .map(|c| format!("c{c}"))
                .collect(),
        })
        .collect();
    let members: Vec<Member> = (0..n_members)
        .map(|i| Member {
            id: i,
            key: format!("m{i}"),
            features: attributes
                .iter()
                .map(|a| rng.random_range(0..a.bins.len()))
                .collect(),
            region: Some(if i % 4 == 0 { "test" } else { "train" }.into()),
        })
        .collect();
    let mut responses = ResponseMatrix::new(n_members, n_queries);
    for m in 0..n_members {
        for (q, query) in queries.iter().enumerate() {
            if rng.random::<f64>() < fill {
                responses
                    .insert(m, q, rng.random_range(0..query.choices.len()))
                    .unwrap();
            }
        }
    }
    Dataset::new(attributes, members, queries, responses).unwrap()
}

/// Message passing with explicit `n × n` adjacency matrices, row-normalized
/// per relation.
pub fn dense_message_pass(
    g: &group_elicit::graph::HeteroGraph,
    hidden: &[bool],
    p: &group_elicit::graph::GnnParameters<f64>,
) -> Vec<f64> {
    let n = g.n_nodes();
    let d = p.dim;
    let mut af = vec![vec![0.0; n]; n];
    let mut ac = vec![vec![0.0; n]; n];
    for m in 0..g.n_members() {
        for &f in g.member_feature_nodes(m) {
            let j = g.feature_node(f);
            af[m][j] = 1.0;
            af[j][m] = 1.0;
        }
    }
    for (e, edge) in g.edges().iter().enumerate() {
        if !hidden[e] {
            let j = g.choice_node(edge.query, edge.choice);
            ac[edge.member][j] = 1.0;
            ac[j][edge.member] = 1.0;
        }
    }
    for a in [&mut af, &mut ac] {
        for row in a.iter_mut() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
    }
    let mut h = vec![vec![1.0; d]; g.n_members()];
    h.extend(p.feature_emb.chunks(d).map(<[f64]>::to_vec));
    h.extend(p.choice_emb.chunks(d).map(<[f64]>::to_vec));
    let mul = |x: &[Vec<f64>], w: &[f64]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                (0..d)
                    .map(|j| (0..d).map(|k| r[k] * w[k * d + j]).sum())
                    .collect()
            })
            .collect()
    };
    let adj = |a: &[Vec<f64>], x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter()
            .map(|r| {
                (0..d)
                    .map(|j| (0..n).map(|k| r[k] * x[k][j]).sum())
                    .collect()
            })
            .collect()
    };
    for l in &p.layers {
        let s = mul(&h, &l.self_loop);
        let f = mul(&adj(&af, &h), &l.membership);
        let c = mul(&adj(&ac, &h), &l.response);
        h = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| (s[i][j] + f[i][j] + c[i][j]).max(0.0))
                    .collect()
            })
            .collect();
    }
    h.concat()
}

//! Two-layer relational message passing, softmax link scores and the
//! hand-derived backward pass for the masked-edge cross-entropy.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Adjacency, HeteroGraph};
use crate::error::{Error, Result};
use crate::population::{ChoiceIndex, MemberId, QueryId};
use crate::predictive::PredictiveDistribution;
use crate::rng::Rng;
use crate::scalar::{argmax, Scalar};

pub(crate) const LOGIT_CLAMP: f64 = 30.0;
pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// Relation weights of one layer, each `d × d` row-major; a row vector `h`
/// maps to `h · W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LayerWeights<T: Scalar> {
    pub self_loop: Vec<T>,
    pub membership: Vec<T>,
    pub response: Vec<T>,
}

impl<T: Scalar> LayerWeights<T> {
    fn zeros(d: usize) -> Self {
        Self {
            self_loop: vec![T::zero(); d * d],
            membership: vec![T::zero(); d * d],
            response: vec![T::zero(); d * d],
        }
    }
}

/// Learnable state: feature and choice embeddings, per-layer relation
/// weights and the softmax temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GnnParameters<T: Scalar> {
    pub dim: usize,
    /// `n_features × d`.
    pub feature_emb: Vec<T>,
    /// `n_choice_nodes × d`.
    pub choice_emb: Vec<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub tau: T,
}

impl<T: Scalar> GnnParameters<T> {
    pub const N_LAYERS: usize = 2;

    pub fn zeros(g: &HeteroGraph, dim: usize, tau: T) -> Self {
        Self {
            dim,
            feature_emb: vec![T::zero(); g.n_features() * dim],
            choice_emb: vec![T::zero(); g.n_choice_nodes() * dim],
            layers: (0..Self::N_LAYERS)
                .map(|_| LayerWeights::zeros(dim))
                .collect(),
            tau,
        }
    }

    /// Standard-normal embeddings, weights with variance `1 / (3d)`.
    pub fn random(g: &HeteroGraph, dim: usize, tau: T, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(g, dim, tau);
        let w_sd = (1.0 / (3.0 * dim as f64)).sqrt();
        let mut draw = |v: &mut Vec<T>, sd: f64| {
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x = T::of(z * sd);
            }
        };
        draw(&mut p.feature_emb, 1.0);
        draw(&mut p.choice_emb, 1.0);
        for l in p.layers.iter_mut() {
            draw(&mut l.self_loop, w_sd);
            draw(&mut l.membership, w_sd);
            draw(&mut l.response, w_sd);
        }
        p
    }

    pub fn check(&self, g: &HeteroGraph) -> Result<()> {
        let d = self.dim;
        let ok = d > 0
            && self.feature_emb.len() == g.n_features() * d
            && self.choice_emb.len() == g.n_choice_nodes() * d
            && self.layers.len() == Self::N_LAYERS
            && self.layers.iter().all(|l| {
                l.self_loop.len() == d * d
                    && l.membership.len() == d * d
                    && l.response.len() == d * d
            });
        if !ok {
            return Err(Error::Shape(format!(
                "parameters (d = {d}) do not fit a graph with {} feature and {} choice nodes",
                g.n_features(),
                g.n_choice_nodes()
            )));
        }
        if !(self.tau > T::zero()) {
            return Err(Error::Parameter("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Every tensor except the temperature, in a fixed order.
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut v = vec![&self.feature_emb, &self.choice_emb];
        for l in &self.layers {
            v.extend([&l.self_loop, &l.membership, &l.response]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = vec![&mut self.feature_emb, &mut self.choice_emb];
        for l in self.layers.iter_mut() {
            v.extend([&mut l.self_loop, &mut l.membership, &mut l.response]);
        }
        v
    }

    pub fn sq_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|&x| x * x)
            .sum()
    }
}

/// Gradient with the same layout as [`GnnParameters::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T: Scalar> {
    pub tensors: Vec<Vec<T>>,
    pub tau: T,
}

impl<T: Scalar> Gradient<T> {
    fn zeros_like(p: &GnnParameters<T>) -> Self {
        Self {
            tensors: p
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect(),
            tau: T::zero(),
        }
    }

    pub fn norm(&self) -> T {
        let s: T = self.tensors.iter().flatten().map(|&x| x * x).sum();
        (s + self.tau * self.tau).sqrt()
    }
}

/// Final-layer vectors for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T: Scalar> {
    pub dim: usize,
    pub n_members: usize,
    pub n_features: usize,
    choice_offset: Vec<usize>,
    n_choice_nodes: usize,
    /// `n_nodes × d`.
    pub values: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn node(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn member(&self, m: MemberId) -> &[T] {
        self.node(m)
    }

    pub fn choice(&self, q: QueryId, c: ChoiceIndex) -> &[T] {
        self.node(self.n_members + self.n_features + self.choice_offset[q] + c)
    }

    pub fn n_choices(&self, q: QueryId) -> usize {
        let end = self
            .choice_offset
            .get(q + 1)
            .copied()
            .unwrap_or(self.n_choice_nodes);
        end - self.choice_offset[q]
    }

    pub fn n_queries(&self) -> usize {
        self.choice_offset.len()
    }
}

/// A supervised member-choice link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Supervision {
    pub member: MemberId,
    pub query: QueryId,
    pub choice: ChoiceIndex,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `out += a · w` for `a: n × d`, `w: d × d`.
fn matmul_acc<T: Scalar>(out: &mut [T], a: &[T], w: &[T], d: usize) {
    for (orow, arow) in out.chunks_exact_mut(d).zip(a.chunks_exact(d)) {
        for (k, &aik) in arow.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let wrow = &w[k * d..(k + 1) * d];
            for (o, &wkj) in orow.iter_mut().zip(wrow) {
                *o = *o + aik * wkj;
            }
        }
    }
}

/// `gw += aᵀ · g`.
fn outer_acc<T: Scalar>(gw: &mut [T], a: &[T], g: &[T], d: usize) {
    for (arow, grow) in a.chunks_exact(d).zip(g.chunks_exact(d)) {
        for (k, &aik) in arow.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let gwrow = &mut gw[k * d..(k + 1) * d];
            for (o, &gij) in gwrow.iter_mut().zip(grow) {
                *o = *o + aik * gij;
            }
        }
    }
}

/// `out += g · wᵀ`.
fn matmul_t_acc<T: Scalar>(out: &mut [T], g: &[T], w: &[T], d: usize) {
    for (orow, grow) in out.chunks_exact_mut(d).zip(g.chunks_exact(d)) {
        for (k, o) in orow.iter_mut().enumerate() {
            *o = *o + dot(grow, &w[k * d..(k + 1) * d]);
        }
    }
}

/// Per-relation neighbor means.
fn aggregate<T: Scalar>(adj: &Adjacency, h: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let n = adj.n_nodes();
    let mut mf = vec![T::zero(); n * d];
    let mut mc = vec![T::zero(); n * d];
    for i in 0..n {
        let nb = adj.feature_neighbors(i);
        if !nb.is_empty() {
            let row = &mut mf[i * d..(i + 1) * d];
            for &j in nb {
                for (o, &x) in row.iter_mut().zip(&h[j * d..(j + 1) * d]) {
                    *o = *o + x;
                }
            }
            let inv = T::one() / T::of(nb.len() as f64);
            row.iter_mut().for_each(|o| *o = *o * inv);
        }
        let deg = adj.response_degree(i);
        if deg > 0 {
            let row = &mut mc[i * d..(i + 1) * d];
            for j in adj.response_neighbors(i) {
                for (o, &x) in row.iter_mut().zip(&h[j * d..(j + 1) * d]) {
                    *o = *o + x;
                }
            }
            let inv = T::one() / T::of(deg as f64);
            row.iter_mut().for_each(|o| *o = *o * inv);
        }
    }
    (mf, mc)
}

/// Transpose of [`aggregate`]: scatters mean-gradients back to neighbors.
fn aggregate_back<T: Scalar>(adj: &Adjacency, gf: &[T], gc: &[T], dh: &mut [T], d: usize) {
    for i in 0..adj.n_nodes() {
        let nb = adj.feature_neighbors(i);
        if !nb.is_empty() {
            let inv = T::one() / T::of(nb.len() as f64);
            let g = &gf[i * d..(i + 1) * d];
            for &j in nb {
                for (o, &x) in dh[j * d..(j + 1) * d].iter_mut().zip(g) {
                    *o = *o + x * inv;
                }
            }
        }
        let deg = adj.response_degree(i);
        if deg > 0 {
            let inv = T::one() / T::of(deg as f64);
            let g = &gc[i * d..(i + 1) * d];
            for j in adj.response_neighbors(i) {
                for (o, &x) in dh[j * d..(j + 1) * d].iter_mut().zip(g) {
                    *o = *o + x * inv;
                }
            }
        }
    }
}

struct LayerCache<T> {
    input: Vec<T>,
    mf: Vec<T>,
    mc: Vec<T>,
    pre: Vec<T>,
}

struct Forward<T> {
    layers: Vec<LayerCache<T>>,
    /// Inverted-dropout multipliers on the hidden layer (empty = none).
    dropout: Vec<T>,
    out: Vec<T>,
}

fn input_matrix<T: Scalar>(adj: &Adjacency, p: &GnnParameters<T>) -> Vec<T> {
    let d = p.dim;
    let mut h = vec![T::one(); adj.n_members() * d];
    h.extend_from_slice(&p.feature_emb);
    h.extend_from_slice(&p.choice_emb);
    debug_assert_eq!(h.len(), adj.n_nodes() * d);
    h
}

fn forward<T: Scalar>(adj: &Adjacency, p: &GnnParameters<T>, dropout: Vec<T>) -> Forward<T> {
    let d = p.dim;
    let mut h = input_matrix(adj, p);
    let mut layers = Vec::with_capacity(p.layers.len());
    for (l, w) in p.layers.iter().enumerate() {
        if l > 0 && !dropout.is_empty() {
            h.iter_mut().zip(&dropout).for_each(|(x, &m)| *x = *x * m);
        }
        let (mf, mc) = aggregate(adj, &h, d);
        let mut pre = vec![T::zero(); h.len()];
        matmul_acc(&mut pre, &h, &w.self_loop, d);
        matmul_acc(&mut pre, &mf, &w.membership, d);
        matmul_acc(&mut pre, &mc, &w.response, d);
        let next: Vec<T> = pre.iter().map(|&z| z.max(T::zero())).collect();
        layers.push(LayerCache {
            input: std::mem::replace(&mut h, next),
            mf,
            mc,
            pre,
        });
    }
    Forward {
        layers,
        dropout,
        out: h,
    }
}

/// Final-layer embeddings of every node under the adjacency view.
pub fn message_pass<T: Scalar>(
    g: &HeteroGraph,
    adj: &Adjacency,
    p: &GnnParameters<T>,
) -> Result<EmbeddingTable<T>> {
    p.check(g)?;
    if adj.n_nodes() != g.n_nodes() {
        return Err(Error::Shape(
            "adjacency was built for a different graph".into(),
        ));
    }
    let f = forward(adj, p, Vec::new());
    Ok(table(g, p.dim, f.out))
}

fn table<T: Scalar>(g: &HeteroGraph, dim: usize, values: Vec<T>) -> EmbeddingTable<T> {
    EmbeddingTable {
        dim,
        n_members: g.n_members(),
        n_features: g.n_features(),
        choice_offset: (0..g.n_queries()).map(|q| g.choice_local(q, 0)).collect(),
        n_choice_nodes: g.n_choice_nodes(),
        values,
    }
}

/// Clamped logits `⟨h_v, h_c⟩ / τ` over the query's choices, plus whether
/// each one hit the clamp.
fn logits<T: Scalar>(
    hv: &[T],
    choices: impl Iterator<Item = impl AsRef<[T]>>,
    tau: T,
) -> Vec<(T, bool)> {
    let lim = T::of(LOGIT_CLAMP);
    choices
        .map(|hc| {
            let s = dot(hv, hc.as_ref()) / tau;
            if s > lim {
                (lim, true)
            } else if s < -lim {
                (-lim, true)
            } else {
                (s, false)
            }
        })
        .collect()
}

fn softmax<T: Scalar>(s: &[(T, bool)]) -> Vec<T> {
    let max = s.iter().fold(T::neg_infinity(), |m, &(x, _)| m.max(x));
    let mut p: Vec<T> = s.iter().map(|&(x, _)| (x - max).exp()).collect();
    let total: T = p.iter().copied().sum();
    p.iter_mut().for_each(|x| *x = *x / total);
    p
}

/// Link-prediction softmax over `q`'s choices for member `v`.
pub fn score<T: Scalar>(
    emb: &EmbeddingTable<T>,
    p: &GnnParameters<T>,
    v: MemberId,
    q: QueryId,
) -> PredictiveDistribution<T> {
    let hv = emb.member(v);
    let s = logits(hv, (0..emb.n_choices(q)).map(|c| emb.choice(q, c)), p.tau);
    PredictiveDistribution {
        query: q,
        probs: softmax(&s),
    }
}

/// Argmax choice and full distribution for each unqueried member.
pub fn impute<T: Scalar>(
    emb: &EmbeddingTable<T>,
    p: &GnnParameters<T>,
    unqueried: &[MemberId],
    q: QueryId,
) -> BTreeMap<MemberId, (ChoiceIndex, PredictiveDistribution<T>)> {
    unqueried
        .iter()
        .map(|&v| {
            let dist = score(emb, p, v, q);
            (v, (argmax(&dist.probs), dist))
        })
        .collect()
}

/// Mean cross-entropy over `batch` plus `(λ/2)‖θ‖²`, and its gradient.
/// `dropout` holds per-entry multipliers for the hidden layer (empty = off).
pub fn loss_and_gradient<T: Scalar>(
    g: &HeteroGraph,
    adj: &Adjacency,
    p: &GnnParameters<T>,
    batch: &[Supervision],
    weight_decay: T,
    dropout: Vec<T>,
) -> Result<(T, Gradient<T>)> {
    p.check(g)?;
    if batch.is_empty() {
        return Err(Error::TrainingData("empty supervision batch".into()));
    }
    let d = p.dim;
    let fw = forward(adj, p, dropout);
    let h = &fw.out;
    let row = |i: usize| &h[i * d..(i + 1) * d];
    let scale = T::one() / T::of(batch.len() as f64);
    let floor = T::of(PROB_FLOOR);

    let mut loss = T::zero();
    let mut dh = vec![T::zero(); h.len()];
    let mut grad = Gradient::zeros_like(p);
    for s in batch {
        let vn = s.member;
        let nodes: Vec<usize> = (0..g.n_choices(s.query))
            .map(|c| g.choice_node(s.query, c))
            .collect();
        let lg = logits(row(vn), nodes.iter().map(|&c| row(c)), p.tau);
        let probs = softmax(&lg);
        let py = probs[s.choice];
        if py < floor {
            loss = loss - floor.ln() * scale;
            continue;
        }
        loss = loss - py.ln() * scale;
        for (c, (&node, &(_, clamped))) in nodes.iter().zip(&lg).enumerate() {
            if clamped {
                continue;
            }
            let target = if c == s.choice { T::one() } else { T::zero() };
            let ds = (probs[c] - target) * scale;
            if ds == T::zero() {
                continue;
            }
            let raw = dot(row(vn), row(node));
            grad.tau = grad.tau - ds * raw / (p.tau * p.tau);
            let k = ds / p.tau;
            for j in 0..d {
                dh[vn * d + j] = dh[vn * d + j] + k * h[node * d + j];
                dh[node * d + j] = dh[node * d + j] + k * h[vn * d + j];
            }
        }
    }

    // back through the layers, last to first
    let mut g_out = dh;
    for (l, cache) in fw.layers.iter().enumerate().rev() {
        let w = &p.layers[l];
        let gz: Vec<T> = g_out
            .iter()
            .zip(&cache.pre)
            .map(|(&gv, &z)| if z > T::zero() { gv } else { T::zero() })
            .collect();
        let base = 2 + 3 * l;
        outer_acc(&mut grad.tensors[base], &cache.input, &gz, d);
        outer_acc(&mut grad.tensors[base + 1], &cache.mf, &gz, d);
        outer_acc(&mut grad.tensors[base + 2], &cache.mc, &gz, d);
        let mut dinput = vec![T::zero(); gz.len()];
        matmul_t_acc(&mut dinput, &gz, &w.self_loop, d);
        let mut gf = vec![T::zero(); gz.len()];
        let mut gc = vec![T::zero(); gz.len()];
        matmul_t_acc(&mut gf, &gz, &w.membership, d);
        matmul_t_acc(&mut gc, &gz, &w.response, d);
        aggregate_back(adj, &gf, &gc, &mut dinput, d);
        if l > 0 && !fw.dropout.is_empty() {
            dinput
                .iter_mut()
                .zip(&fw.dropout)
                .for_each(|(x, &m)| *x = *x * m);
        }
        g_out = dinput;
    }
    let nm = adj.n_members() * d;
    let nf = p.feature_emb.len();
    grad.tensors[0].copy_from_slice(&g_out[nm..nm + nf]);
    grad.tensors[1].copy_from_slice(&g_out[nm + nf..]);

    if weight_decay > T::zero() {
        loss = loss + weight_decay * T::of(0.5) * p.sq_norm();
        for (gt, pt) in grad.tensors.iter_mut().zip(p.tensors()) {
            gt.iter_mut()
                .zip(pt)
                .for_each(|(gv, &x)| *gv = *gv + weight_decay * x);
        }
    }
    Ok((loss, grad))
}

/// Inverted-dropout multipliers for an `n × d` hidden layer.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut Rng) -> Vec<T> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

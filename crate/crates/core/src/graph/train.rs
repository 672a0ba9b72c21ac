//! Masked-edge training with Adam, and a finite-difference gradient check.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{dropout_mask, loss_and_gradient, GnnParameters, Gradient, Supervision};
use super::{Adjacency, HeteroGraph};
use crate::error::{Error, Result};
use crate::population::MemberId;
use crate::rng::{rng_for, Rng};
use crate::scalar::Scalar;

/// Per-epoch split of training members: fully observed, partially masked
/// and cold-start (every response edge masked).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub full_fraction: f64,
    pub partial_fraction: f64,
    /// Share of a partial member's edges that get masked.
    pub partial_rate: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            full_fraction: 0.4,
            partial_fraction: 0.3,
            partial_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub full: Vec<MemberId>,
    pub partial: Vec<MemberId>,
    pub cold: Vec<MemberId>,
    /// `hidden[e]` marks response edge `e` as masked.
    pub hidden: Vec<bool>,
}

impl MaskPlan {
    pub fn draw(g: &HeteroGraph, cfg: &MaskConfig, rng: &mut Rng) -> Self {
        let n = g.n_members();
        let mut order: Vec<MemberId> = (0..n).collect();
        order.shuffle(rng);
        let n_full = ((cfg.full_fraction * n as f64).round() as usize).min(n);
        let n_partial = ((cfg.partial_fraction * n as f64).round() as usize).min(n - n_full);
        let mut full = order[..n_full].to_vec();
        let mut partial = order[n_full..n_full + n_partial].to_vec();
        let mut cold = order[n_full + n_partial..].to_vec();
        full.sort_unstable();
        partial.sort_unstable();
        cold.sort_unstable();

        let mut hidden = vec![false; g.n_response_edges()];
        for &m in &partial {
            let mut ids = g.member_edge_ids(m).to_vec();
            ids.shuffle(rng);
            let k = (cfg.partial_rate * ids.len() as f64).round() as usize;
            for &e in &ids[..k.min(ids.len())] {
                hidden[e] = true;
            }
        }
        for &m in &cold {
            for &e in g.member_edge_ids(m) {
                hidden[e] = true;
            }
        }
        Self {
            full,
            partial,
            cold,
            hidden,
        }
    }

    pub fn masked(&self, g: &HeteroGraph) -> Vec<Supervision> {
        g.edges()
            .iter()
            .zip(&self.hidden)
            .filter(|(_, &h)| h)
            .map(|(e, _)| Supervision {
                member: e.member,
                query: e.query,
                choice: e.choice,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Initial temperature; `None` uses `sqrt(dim)`.
    pub tau_init: Option<f64>,
    pub mask: MaskConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 500,
            batch_size: 2048,
            lr: 2e-3,
            weight_decay: 1e-4,
            dropout: 0.1,
            tau_init: None,
            mask: MaskConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean masked-edge cross-entropy per epoch (without the decay term).
    pub epoch_loss: Vec<f64>,
    /// Cross-entropy on a fixed probe mask before and after training.
    pub probe_start: f64,
    pub probe_end: f64,
}

/// Trained parameters with the configuration and diagnostics that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trained<T: Scalar> {
    pub params: GnnParameters<T>,
    pub config: TrainConfig,
    pub report: TrainReport,
}

const TAU_MIN: f64 = 1e-3;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam<T: Scalar> {
    m: Gradient<T>,
    v: Gradient<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(p: &GnnParameters<T>) -> Self {
        let zeros = Gradient {
            tensors: p
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect(),
            tau: T::zero(),
        };
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut GnnParameters<T>, g: &Gradient<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(BETA1), T::of(BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::of(lr);
        let eps = T::of(ADAM_EPS);
        let upd = |x: &mut T, m: &mut T, v: &mut T, gr: T| {
            *m = b1 * *m + (T::one() - b1) * gr;
            *v = b2 * *v + (T::one() - b2) * gr * gr;
            *x = *x - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((pt, mt), vt), gt) in p
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors.iter_mut())
            .zip(self.v.tensors.iter_mut())
            .zip(&g.tensors)
        {
            for (((x, m), v), &gr) in pt.iter_mut().zip(mt.iter_mut()).zip(vt.iter_mut()).zip(gt) {
                upd(x, m, v, gr);
            }
        }
        upd(&mut p.tau, &mut self.m.tau, &mut self.v.tau, g.tau);
        p.tau = p.tau.max(T::of(TAU_MIN));
    }
}

/// Fits parameters by masking response edges epoch by epoch and predicting
/// the masked links from the remaining graph.
pub fn train<T: Scalar>(g: &HeteroGraph, cfg: &TrainConfig) -> Result<Trained<T>> {
    if g.n_response_edges() == 0 {
        return Err(Error::TrainingData(
            "graph has no response edges to mask".into(),
        ));
    }
    if cfg.dim == 0 || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(
            "dim and batch size must be positive, dropout in [0, 1)".into(),
        ));
    }
    let tau = T::of(cfg.tau_init.unwrap_or((cfg.dim as f64).sqrt()));
    let mut params = GnnParameters::random(g, cfg.dim, tau, &mut rng_for(cfg.seed, "gnn-init", 0));
    let wd = T::of(cfg.weight_decay);

    let probe_plan = MaskPlan::draw(g, &cfg.mask, &mut rng_for(cfg.seed, "gnn-probe-mask", 0));
    let probe_adj = Adjacency::with_hidden(g, probe_plan.hidden.clone());
    let probe_batch = probe_plan.masked(g);
    let probe = |p: &GnnParameters<T>| -> Result<f64> {
        if probe_batch.is_empty() {
            return Ok(0.0);
        }
        Ok(
            loss_and_gradient(g, &probe_adj, p, &probe_batch, T::zero(), Vec::new())?
                .0
                .as_f64(),
        )
    };

    let mut report = TrainReport {
        probe_start: probe(&params)?,
        ..TrainReport::default()
    };
    let mut adam = Adam::new(&params);
    let hidden_len = g.n_nodes() * cfg.dim;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, "gnn-epoch", epoch as u64);
        let plan = MaskPlan::draw(g, &cfg.mask, &mut rng);
        let mut sup = plan.masked(g);
        if sup.is_empty() {
            report.epoch_loss.push(f64::NAN);
            continue;
        }
        sup.shuffle(&mut rng);
        let adj = Adjacency::with_hidden(g, plan.hidden);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in sup.chunks(cfg.batch_size) {
            let mask = dropout_mask(hidden_len, cfg.dropout, &mut rng);
            let (loss, grad) = loss_and_gradient(g, &adj, &params, batch, wd, mask)?;
            let data_loss = loss.as_f64() - 0.5 * cfg.weight_decay * params.sq_norm().as_f64();
            total += data_loss * batch.len() as f64;
            count += batch.len();
            adam.step(&mut params, &grad, cfg.lr);
        }
        report.epoch_loss.push(total / count as f64);
    }
    report.probe_end = probe(&params)?;
    Ok(Trained {
        params,
        config: cfg.clone(),
        report,
    })
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-3)` between the
/// analytic gradient and central differences with step `1e-5`, over every
/// parameter including the temperature.
pub fn gradient_check<T: Scalar>(
    g: &HeteroGraph,
    adj: &Adjacency,
    p: &GnnParameters<T>,
    batch: &[Supervision],
    weight_decay: T,
) -> Result<T> {
    let eps = T::of(1e-5);
    let two_eps = eps + eps;
    let floor = T::of(1e-3);
    let (_, analytic) = loss_and_gradient(g, adj, p, batch, weight_decay, Vec::new())?;
    let loss_at = |q: &GnnParameters<T>| -> Result<T> {
        Ok(loss_and_gradient(g, adj, q, batch, weight_decay, Vec::new())?.0)
    };
    let rel = |a: T, n: T| (a - n).abs() / a.abs().max(n.abs()).max(floor);

    let mut worst = T::zero();
    let mut probe = p.clone();
    for (ti, grad) in analytic.tensors.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + eps;
            let up = loss_at(&probe)?;
            probe.tensors_mut()[ti][i] = orig - eps;
            let down = loss_at(&probe)?;
            probe.tensors_mut()[ti][i] = orig;
            worst = worst.max(rel(a, (up - down) / two_eps));
        }
    }
    let orig = probe.tau;
    probe.tau = orig + eps;
    let up = loss_at(&probe)?;
    probe.tau = orig - eps;
    let down = loss_at(&probe)?;
    worst = worst.max(rel(analytic.tau, (up - down) / two_eps));
    Ok(worst)
}

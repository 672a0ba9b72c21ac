use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{Method, MetricRecord};
use crate::error::{Error, Result};

/// Mean and standard error of each metric per (method, budget, round).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub budget: f64,
    pub round: usize,
    pub trials: usize,
    pub accuracy_mean: f64,
    pub accuracy_se: f64,
    pub perplexity_mean: f64,
    pub perplexity_se: f64,
    pub brier_mean: f64,
    pub brier_se: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(records: &[MetricRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, u64, usize), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method, r.budget.to_bits(), r.round))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((method, budget, round), rs)| {
            let col =
                |f: fn(&MetricRecord) -> f64| mean_se(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (accuracy_mean, accuracy_se) = col(|r| r.accuracy);
            let (perplexity_mean, perplexity_se) = col(|r| r.perplexity);
            let (brier_mean, brier_se) = col(|r| r.brier);
            SummaryRow {
                method,
                budget: f64::from_bits(budget),
                round,
                trials: rs.len(),
                accuracy_mean,
                accuracy_se,
                perplexity_mean,
                perplexity_se,
                brier_mean,
                brier_se,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.method, a.round)
            .cmp(&(b.method, b.round))
            .then(a.budget.total_cmp(&b.budget))
    });
    rows
}

/// Mean accuracy of `method` at `budget` after `round`, if recorded.
pub fn mean_accuracy(
    rows: &[SummaryRow],
    method: Method,
    budget: f64,
    round: usize,
) -> Option<f64> {
    rows.iter()
        .find(|r| r.method == method && r.budget == budget && r.round == round)
        .map(|r| r.accuracy_mean)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub fn write_jsonl<S: Serialize>(path: &Path, items: &[S]) -> Result<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Round against mean accuracy, one row per (budget, method, round).
pub fn write_plot_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["budget", "method", "round", "accuracy", "accuracy_se"])
        .map_err(|e| Error::Serde(e.to_string()))?;
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.budget
            .total_cmp(&b.budget)
            .then((a.method, a.round).cmp(&(b.method, b.round)))
    });
    for r in sorted {
        w.write_record([
            r.budget.to_string(),
            r.method.to_string(),
            r.round.to_string(),
            r.accuracy_mean.to_string(),
            r.accuracy_se.to_string(),
        ])
        .map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

//! Accuracy, perplexity and Brier score over categorical predictions.

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Probabilities below this are floored inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

fn check<T>(preds: &[Vec<T>], truth: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Metric("no instances".into()));
    }
    if preds.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if let Some(i) = preds.iter().zip(truth).position(|(p, &y)| y >= p.len()) {
        return Err(Error::Metric(format!("label out of range at instance {i}")));
    }
    Ok(())
}

/// Share of instances whose argmax (lowest index on ties) equals the label.
pub fn accuracy<T: Scalar>(preds: &[Vec<T>], truth: &[usize]) -> Result<f64> {
    check(preds, truth)?;
    let hits = preds
        .iter()
        .zip(truth)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `exp(-mean log p(y))`.
pub fn perplexity<T: Scalar>(preds: &[Vec<T>], truth: &[usize]) -> Result<f64> {
    check(preds, truth)?;
    let nll: f64 = preds
        .iter()
        .zip(truth)
        .map(|(p, &y)| -p[y].as_f64().max(LOG_FLOOR).ln())
        .sum();
    Ok((nll / preds.len() as f64).exp())
}

/// Mean over instances of `Σ_c (p_c - 1[c = y])²`.
pub fn brier<T: Scalar>(preds: &[Vec<T>], truth: &[usize]) -> Result<f64> {
    check(preds, truth)?;
    let total: f64 = preds
        .iter()
        .zip(truth)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(c, &x)| {
                    let t = if c == y { 1.0 } else { 0.0 };
                    (x.as_f64() - t).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// `(acc_t - acc_0) / (acc_full - acc_0)`, unclipped.
pub fn relative_recovery(acc_t: f64, acc_0: f64, acc_full: f64) -> Result<f64> {
    let gap = acc_full - acc_0;
    if gap == 0.0 {
        return Err(Error::DegenerateGap(acc_0));
    }
    Ok((acc_t - acc_0) / gap)
}

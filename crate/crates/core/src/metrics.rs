//! Flow prediction metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RANGE_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub mape: f64,
    pub cpc: f64,
    pub n: usize,
    pub by_range: Vec<RangeBin>,
}

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true values but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(s / y_true.len() as f64)
}

/// Mean absolute percentage error as a fraction (0.5 means 50%).
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    if let Some(t) = y_true.iter().find(|&&t| t <= 0.0 || t.is_nan()) {
        return Err(Error::InvalidArgument(format!("MAPE needs positive true values, got {t}")));
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| ((t - p) / t).abs()).sum();
    Ok(s / y_true.len() as f64)
}

/// Common part of commuters. Two all-zero arrays score 1.
pub fn cpc(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    if let Some(v) = y_true.iter().chain(y_pred).find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidArgument(format!("CPC needs non-negative values, got {v}")));
    }
    let common: f64 = y_true.iter().zip(y_pred).map(|(t, p)| t.min(*p)).sum();
    let total: f64 = y_true.iter().sum::<f64>() + y_pred.iter().sum::<f64>();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * common / total)
}

/// Splits pairs into `n_bins` equal-count groups by ascending true value
/// and reports MAPE per group, summed in input order. Empty groups (fewer pairs than bins) are
/// left out.
pub fn accuracy_by_range(y_true: &[f64], y_pred: &[f64], n_bins: usize) -> Result<Vec<RangeBin>> {
    check_pair(y_true, y_pred)?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..y_true.len()).collect();
    order.sort_by(|&a, &b| y_true[a].total_cmp(&y_true[b]));
    let n = order.len();
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let chunk = &order[b * n / n_bins..(b + 1) * n / n_bins];
        if chunk.is_empty() {
            continue;
        }
        let lo = y_true[chunk[0]];
        let hi = y_true[chunk[chunk.len() - 1]];
        let mut members = chunk.to_vec();
        members.sort_unstable();
        let t: Vec<f64> = members.iter().map(|&i| y_true[i]).collect();
        let p: Vec<f64> = members.iter().map(|&i| y_pred[i]).collect();
        bins.push(RangeBin {
            lo,
            hi,
            count: t.len(),
            mape: mape(&t, &p)?,
        });
    }
    Ok(bins)
}

/// Full report; negative predictions are clamped to zero first.
pub fn evaluate(y_true: &[f64], y_pred: &[f64], n_bins: usize) -> Result<EvalReport> {
    check_pair(y_true, y_pred)?;
    let clamped: Vec<f64> = y_pred.iter().map(|p| p.max(0.0)).collect();
    Ok(EvalReport {
        mse: mse(y_true, &clamped)?,
        mape: mape(y_true, &clamped)?,
        cpc: cpc(y_true, &clamped)?,
        n: y_true.len(),
        by_range: accuracy_by_range(y_true, &clamped, n_bins)?,
    })
}

//! Pareto tail exponents by log-rank regression:
//! `ln(rank - 0.5) = c - lambda ln v + e`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ols;

pub const MIN_TAIL_OBS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub lambda_hat: f64,
    pub standard_error: f64,
    pub r_squared: f64,
    pub intercept: f64,
    /// Observations with `ln v` below this were dropped.
    pub threshold: f64,
    pub n_used: usize,
}

/// Keep values whose log is at least `threshold`; returns logs with their
/// original positions.
fn above(sample: &[f64], threshold: f64) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(sample.len());
    for (i, &v) in sample.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::DomainError(format!("sample values must be > 0, got {v}")));
        }
        let lv = v.ln();
        if lv >= threshold {
            out.push((i, lv));
        }
    }
    Ok(out)
}

/// Descending ranks (largest value gets 1); ties keep input order.
fn ranks(logs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..logs.len()).collect();
    idx.sort_by(|&a, &b| logs[b].total_cmp(&logs[a]));
    let mut r = vec![0.0; logs.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = (k + 1) as f64;
    }
    r
}

/// Log-rank regression on the values with `ln v >= threshold`
/// (pass `f64::NEG_INFINITY` to keep all).
pub fn rank_regression(sample: &[f64], threshold: f64) -> Result<TailFit> {
    let kept = above(sample, threshold)?;
    if kept.len() < MIN_TAIL_OBS {
        return Err(Error::TooFewObservations { got: kept.len(), need: MIN_TAIL_OBS });
    }
    let logs: Vec<f64> = kept.iter().map(|k| k.1).collect();
    let r = ranks(&logs);
    let y: Vec<f64> = r.iter().map(|v| (v - 0.5).ln()).collect();
    let design = DMatrix::from_fn(logs.len(), 2, |i, j| if j == 0 { 1.0 } else { logs[i] });
    let fit = ols(&design, &y)?;
    if fit.dropped.contains(&1) {
        return Err(Error::RankDeficient("all retained values are equal".into()));
    }
    Ok(TailFit {
        lambda_hat: -fit.coef[1],
        standard_error: fit.se[1],
        r_squared: fit.r2,
        intercept: fit.coef[0],
        threshold,
        n_used: logs.len(),
    })
}

/// Pooled variant: ranks are taken within each year and the regression adds
/// a dummy for every year but the first.
pub fn rank_regression_by_year(sample: &[f64], years: &[i32], threshold: f64) -> Result<TailFit> {
    if years.len() != sample.len() {
        return Err(Error::KeyMismatch(format!(
            "{} values but {} years",
            sample.len(),
            years.len()
        )));
    }
    let kept = above(sample, threshold)?;
    if kept.len() < MIN_TAIL_OBS {
        return Err(Error::TooFewObservations { got: kept.len(), need: MIN_TAIL_OBS });
    }
    let mut distinct: Vec<i32> = kept.iter().map(|k| years[k.0]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let mut y = vec![0.0; kept.len()];
    for &yr in &distinct {
        let members: Vec<usize> = (0..kept.len()).filter(|&i| years[kept[i].0] == yr).collect();
        let logs: Vec<f64> = members.iter().map(|&i| kept[i].1).collect();
        for (&i, r) in members.iter().zip(ranks(&logs)) {
            y[i] = (r - 0.5).ln();
        }
    }
    let k = 2 + distinct.len() - 1;
    let design = DMatrix::from_fn(kept.len(), k, |i, j| match j {
        0 => 1.0,
        1 => kept[i].1,
        _ => (years[kept[i].0] == distinct[j - 1]) as u8 as f64,
    });
    let fit = ols(&design, &y)?;
    if fit.dropped.contains(&1) {
        return Err(Error::RankDeficient("all retained values are equal".into()));
    }
    Ok(TailFit {
        lambda_hat: -fit.coef[1],
        standard_error: fit.se[1],
        r_squared: fit.r2,
        intercept: fit.coef[0],
        threshold,
        n_used: kept.len(),
    })
}

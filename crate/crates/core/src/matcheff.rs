//! Matching-function intercept and match-efficiency persistence.
//!
//! The log gap between top and non-top quality follows
//! `g_t = (1 - rho_x) b0 + rho_x g_{t-1} + u_t`; with the lagged gap as the
//! only instrument the GMM estimator is the OLS fit of `g_t` on `g_{t-1}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::akm::FirmQuality;
use crate::error::{Error, Result};
use crate::linalg::{covariance, mean, simple_regression, variance};
use crate::synth::FirmYear;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub ln_x: f64,
    pub ln_y: f64,
}

impl GapRow {
    pub fn gap(&self) -> f64 {
        self.ln_y - self.ln_x
    }
}

pub fn gap_rows_from_truth(firms: &[FirmYear]) -> Vec<GapRow> {
    let mut rows: Vec<GapRow> = firms
        .iter()
        .map(|r| GapRow { firm_id: r.firm_id, sector: r.sector, year: r.year, ln_x: r.x.ln(), ln_y: r.y.ln() })
        .collect();
    rows.sort_by_key(|r| (r.firm_id, r.year));
    rows
}

/// Attach sectors from the firm table to estimated qualities.
pub fn gap_rows_from_quality(firms: &[FirmYear], quality: &[FirmQuality]) -> Result<Vec<GapRow>> {
    let sector: BTreeMap<u64, u32> = firms.iter().map(|r| (r.firm_id, r.sector)).collect();
    let mut rows = quality
        .iter()
        .map(|q| {
            let s = sector
                .get(&q.firm_id)
                .ok_or_else(|| Error::KeyMismatch(format!("firm {} has no sector", q.firm_id)))?;
            Ok(GapRow { firm_id: q.firm_id, sector: *s, year: q.year, ln_x: q.ln_x, ln_y: q.ln_y })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.firm_id, r.year));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEffEstimate {
    pub sector: u32,
    pub b0: f64,
    pub rho_x: f64,
    /// Intercept of the gap regression, `(1 - rho_x) b0`.
    pub intercept: f64,
    pub n_pairs: usize,
    /// The lagged gap has no variation; `rho_x` is set to 0 and `b0` to the
    /// mean gap.
    pub degenerate: bool,
    /// `|rho_x| >= 1`: the gap is not stationary and `b0` is the mean gap.
    pub nonstationary: bool,
    /// Slope of `ln y` on `ln x` in the same sector.
    pub b1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaXRow {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub omega_x: f64,
}

fn gap_pairs(rows: &[GapRow]) -> (Vec<f64>, Vec<f64>) {
    let (mut lag, mut cur) = (Vec::new(), Vec::new());
    for i in 1..rows.len() {
        if rows[i].firm_id == rows[i - 1].firm_id && rows[i].year == rows[i - 1].year + 1 {
            lag.push(rows[i - 1].gap());
            cur.push(rows[i].gap());
        }
    }
    (lag, cur)
}

/// Estimate `(b0, rho_x)` for one sector's rows, sorted by firm and year.
pub fn estimate_match_efficiency(rows: &[GapRow]) -> Result<MatchEffEstimate> {
    let sector = rows.first().map(|r| r.sector).ok_or_else(|| Error::InsufficientPanel("no rows".into()))?;
    let (lag, cur) = gap_pairs(rows);
    if lag.len() < 2 {
        return Err(Error::InsufficientPanel(format!("{} consecutive year pairs, need 2", lag.len())));
    }
    let gaps: Vec<f64> = rows.iter().map(GapRow::gap).collect();
    let b1 = slope(rows).map(|s| s.b1).unwrap_or(f64::NAN);
    let spread = lag.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if variance(&lag).sqrt() <= 1e-12 * spread {
        let b0 = mean(&gaps);
        return Ok(MatchEffEstimate {
            sector,
            b0,
            rho_x: 0.0,
            intercept: b0,
            n_pairs: lag.len(),
            degenerate: true,
            nonstationary: false,
            b1,
        });
    }
    let rho_x = covariance(&lag, &cur) / variance(&lag);
    let intercept = mean(&cur) - rho_x * mean(&lag);
    let nonstationary = rho_x.abs() >= 1.0;
    let b0 = if nonstationary { mean(&gaps) } else { intercept / (1.0 - rho_x) };
    Ok(MatchEffEstimate { sector, b0, rho_x, intercept, n_pairs: lag.len(), degenerate: false, nonstationary, b1 })
}

/// `omega_x = gap - b0` with each row's sector intercept.
pub fn recover_omega_x(rows: &[GapRow], estimates: &[MatchEffEstimate]) -> Result<Vec<OmegaXRow>> {
    let by: BTreeMap<u32, f64> = estimates.iter().map(|e| (e.sector, e.b0)).collect();
    rows.iter()
        .map(|r| {
            let b0 = by.get(&r.sector).ok_or(Error::MissingCoefficients(r.sector))?;
            Ok(OmegaXRow { firm_id: r.firm_id, sector: r.sector, year: r.year, omega_x: r.gap() - b0 })
        })
        .collect()
}

/// Per-sector estimates plus the match-efficiency series.
pub fn estimate_all(rows: &[GapRow]) -> Result<(Vec<MatchEffEstimate>, Vec<OmegaXRow>)> {
    let mut by: BTreeMap<u32, Vec<GapRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.sector).or_default().push(r.clone());
    }
    let estimates = by
        .iter()
        .map(|(s, rs)| estimate_match_efficiency(rs).map_err(|e| e.in_stage(&format!("sector {s}"))))
        .collect::<Result<Vec<_>>>()?;
    let series = recover_omega_x(rows, &estimates)?;
    Ok((estimates, series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    /// `None` for the pooled fit.
    pub sector: Option<u32>,
    pub b1: f64,
    pub intercept: f64,
    /// NaN with fewer than three observations.
    pub se: f64,
    pub n: usize,
}

fn slope(rows: &[GapRow]) -> Result<SlopeCheck> {
    if rows.len() < 2 {
        return Err(Error::TooFewObservations { got: rows.len(), need: 2 });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.ln_x).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ln_y).collect();
    if variance(&x) <= 0.0 {
        return Err(Error::RankDeficient("ln x has no variation".into()));
    }
    let sector = rows[0].sector;
    let sector = rows.iter().all(|r| r.sector == sector).then_some(sector);
    if rows.len() == 2 {
        let b1 = (y[1] - y[0]) / (x[1] - x[0]);
        return Ok(SlopeCheck { sector, b1, intercept: y[0] - b1 * x[0], se: f64::NAN, n: 2 });
    }
    let fit = simple_regression(&x, &y)?;
    Ok(SlopeCheck { sector, b1: fit.coef[1], intercept: fit.coef[0], se: fit.se[1], n: rows.len() })
}

/// OLS slope of `ln y` on `ln x`: one row per sector, then the pooled fit.
pub fn general_slope_check(rows: &[GapRow]) -> Result<Vec<SlopeCheck>> {
    let mut by: BTreeMap<u32, Vec<GapRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.sector).or_default().push(r.clone());
    }
    let mut out = by.values().map(|rs| slope(rs)).collect::<Result<Vec<_>>>()?;
    if by.len() > 1 {
        let mut pooled = slope(rows)?;
        pooled.sector = None;
        out.push(pooled);
    } else if let Some(first) = out.first() {
        out.push(SlopeCheck { sector: None, ..first.clone() });
    }
    Ok(out)
}

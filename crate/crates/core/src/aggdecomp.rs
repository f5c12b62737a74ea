//! Measured productivity, share-weighted aggregation and its decompositions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance, mean, quantile, variance};
use crate::matcheff::{GapRow, OmegaXRow};
use crate::prodfn::TfpRow;

/// Tolerance on the per-year sum of shares.
pub const SHARE_TOL: f64 = 1e-8;
/// Minimum number of firms per year for dispersion statistics.
pub const MIN_DISPERSION_FIRMS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `z = omega + theta ln y`
    TopBased,
    /// `z = omega + theta omega_x + theta ln x`
    NontopBased,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::TopBased => "top",
            Variant::NontopBased => "nontop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub z: f64,
    pub omega: f64,
    pub quality: f64,
}

fn index<T>(rows: &[T], key: impl Fn(&T) -> (u64, i32)) -> BTreeMap<(u64, i32), &T> {
    rows.iter().map(|r| (key(r), r)).collect()
}

fn missing(what: &str, k: (u64, i32)) -> Error {
    Error::KeyMismatch(format!("no {what} for firm {} in {}", k.0, k.1))
}

/// Measured productivity for every TFP row; quality rows (and the
/// match-efficiency series for the non-top variant) must cover the same keys.
pub fn measured_productivity(
    tfp: &[TfpRow],
    quality: &[GapRow],
    omega_x: &[OmegaXRow],
    theta: &BTreeMap<u32, f64>,
    variant: Variant,
) -> Result<Vec<MeasuredRow>> {
    let q = index(quality, |r| (r.firm_id, r.year));
    let ox = index(omega_x, |r| (r.firm_id, r.year));
    tfp.iter()
        .map(|t| {
            let k = (t.firm_id, t.year);
            let th = *theta.get(&t.sector).ok_or(Error::MissingCoefficients(t.sector))?;
            let g = q.get(&k).ok_or_else(|| missing("quality", k))?;
            let quality = match variant {
                Variant::TopBased => th * g.ln_y,
                Variant::NontopBased => th * (ox.get(&k).ok_or_else(|| missing("match efficiency", k))?.omega_x + g.ln_x),
            };
            Ok(MeasuredRow { firm_id: t.firm_id, sector: t.sector, year: t.year, z: t.omega_hat + quality, omega: t.omega_hat, quality })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdMeasuredRow {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub z: f64,
    pub eta: f64,
    /// `beta_x ln x`
    pub x_part: f64,
    /// `beta_y ln y`
    pub y_part: f64,
}

/// `z = eta + beta_x ln x + beta_y ln y` with sector `(beta_x, beta_y)`.
pub fn cd_measured_productivity(
    eta: &[TfpRow],
    quality: &[GapRow],
    betas: &BTreeMap<u32, (f64, f64)>,
) -> Result<Vec<CdMeasuredRow>> {
    let q = index(quality, |r| (r.firm_id, r.year));
    eta.iter()
        .map(|t| {
            let k = (t.firm_id, t.year);
            let &(bx, by) = betas.get(&t.sector).ok_or(Error::MissingCoefficients(t.sector))?;
            let g = q.get(&k).ok_or_else(|| missing("quality", k))?;
            let (x_part, y_part) = (bx * g.ln_x, by * g.ln_y);
            Ok(CdMeasuredRow {
                firm_id: t.firm_id,
                sector: t.sector,
                year: t.year,
                z: t.omega_hat + x_part + y_part,
                eta: t.omega_hat,
                x_part,
                y_part,
            })
        })
        .collect()
}

/// Row indices grouped by year.
fn by_year(years: &[i32]) -> BTreeMap<i32, Vec<usize>> {
    let mut out: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in years.iter().enumerate() {
        out.entry(y).or_default().push(i);
    }
    out
}

fn check_lengths(years: &[i32], cols: &[&[f64]]) -> Result<()> {
    for c in cols {
        if c.len() != years.len() {
            return Err(Error::KeyMismatch(format!("{} years but a column of length {}", years.len(), c.len())));
        }
    }
    Ok(())
}

fn check_shares(year: i32, s: &[f64]) -> Result<()> {
    let sum: f64 = s.iter().sum();
    if (sum - 1.0).abs() > SHARE_TOL || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::SharesNotNormalized { year, sum });
    }
    Ok(())
}

/// Normalize positive weights (such as current-price output) within year.
pub fn shares_within_year(years: &[i32], weights: &[f64]) -> Result<Vec<f64>> {
    check_lengths(years, &[weights])?;
    let mut out = vec![0.0; weights.len()];
    for (year, idx) in by_year(years) {
        let total: f64 = idx.iter().map(|&i| weights[i]).sum();
        if !(total > 0.0) {
            return Err(Error::SharesNotNormalized { year, sum: total });
        }
        for &i in &idx {
            out[i] = weights[i] / total;
        }
    }
    Ok(out)
}

/// `z_t = sum_j s_jt z_jt`; `e^{z_t}` is the share-weighted geometric mean.
pub fn aggregate(years: &[i32], values: &[f64], shares: &[f64]) -> Result<Vec<(i32, f64)>> {
    check_lengths(years, &[values, shares])?;
    by_year(years)
        .into_iter()
        .map(|(year, idx)| {
            let s: Vec<f64> = idx.iter().map(|&i| shares[i]).collect();
            check_shares(year, &s)?;
            Ok((year, idx.iter().map(|&i| shares[i] * values[i]).sum()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRow {
    pub year: i32,
    pub n: usize,
    pub aggregate: f64,
    /// Unweighted mean.
    pub mean: f64,
    /// `sum_j (s_j - 1/n)(z_j - mean)`, a sum rather than an average.
    pub cov: f64,
}

impl OpRow {
    pub fn identity_gap(&self) -> f64 {
        self.aggregate - self.mean - self.cov
    }
}

fn op_parts(v: &[f64], s: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let (zm, sm) = (v.iter().sum::<f64>() / n, 1.0 / n);
    let agg = v.iter().zip(s).map(|(a, b)| a * b).sum();
    let cov = v.iter().zip(s).map(|(a, b)| (b - sm) * (a - zm)).sum();
    (agg, zm, cov)
}

/// Olley-Pakes split of each year's aggregate.
pub fn olley_pakes(years: &[i32], values: &[f64], shares: &[f64]) -> Result<Vec<OpRow>> {
    check_lengths(years, &[values, shares])?;
    by_year(years)
        .into_iter()
        .map(|(year, idx)| {
            let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            let s: Vec<f64> = idx.iter().map(|&i| shares[i]).collect();
            check_shares(year, &s)?;
            let (aggregate, mean, cov) = op_parts(&v, &s);
            Ok(OpRow { year, n: idx.len(), aggregate, mean, cov })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourTermRow {
    pub year: i32,
    pub n: usize,
    pub aggregate: f64,
    pub omega_mean: f64,
    pub omega_cov: f64,
    pub quality_mean: f64,
    pub quality_cov: f64,
}

impl FourTermRow {
    pub fn omega(&self) -> f64 {
        self.omega_mean + self.omega_cov
    }

    pub fn quality(&self) -> f64 {
        self.quality_mean + self.quality_cov
    }

    pub fn identity_gap(&self) -> f64 {
        self.aggregate - self.omega() - self.quality()
    }
}

/// Olley-Pakes applied to both components of `z = omega + quality`.
pub fn four_term(years: &[i32], omega: &[f64], quality: &[f64], shares: &[f64]) -> Result<Vec<FourTermRow>> {
    check_lengths(years, &[omega, quality, shares])?;
    by_year(years)
        .into_iter()
        .map(|(year, idx)| {
            let s: Vec<f64> = idx.iter().map(|&i| shares[i]).collect();
            check_shares(year, &s)?;
            let w: Vec<f64> = idx.iter().map(|&i| omega[i]).collect();
            let q: Vec<f64> = idx.iter().map(|&i| quality[i]).collect();
            let z: Vec<f64> = w.iter().zip(&q).map(|(a, b)| a + b).collect();
            let (aggregate, _, _) = op_parts(&z, &s);
            let (_, omega_mean, omega_cov) = op_parts(&w, &s);
            let (_, quality_mean, quality_cov) = op_parts(&q, &s);
            Ok(FourTermRow { year, n: idx.len(), aggregate, omega_mean, omega_cov, quality_mean, quality_cov })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub series: String,
    pub start: i32,
    pub end: i32,
    /// Log points per year, times 100.
    pub rate: f64,
}

/// Average annual growth of a log series over each `(start, end)` window.
pub fn growth_rates(name: &str, series: &[(i32, f64)], windows: &[(i32, i32)]) -> Result<Vec<GrowthRow>> {
    let at: BTreeMap<i32, f64> = series.iter().copied().collect();
    windows
        .iter()
        .map(|&(start, end)| {
            let (Some(a), Some(b)) = (at.get(&start), at.get(&end)) else {
                return Err(Error::WindowOutOfRange { start, end });
            };
            if end <= start {
                return Err(Error::WindowOutOfRange { start, end });
            }
            Ok(GrowthRow { series: name.to_string(), start, end, rate: (b - a) / (end - start) as f64 * 100.0 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub year: i32,
    pub n: usize,
    pub var_z: f64,
    pub var_omega: f64,
    pub var_quality: f64,
    pub cov_omega_quality: f64,
    /// Interquartile range of (z, omega, quality).
    pub iqr: [f64; 3],
    /// 90th minus 10th percentile of (z, omega, quality).
    pub p90_p10: [f64; 3],
}

impl DispersionRow {
    pub fn identity_gap(&self) -> f64 {
        self.var_z - self.var_omega - self.var_quality - 2.0 * self.cov_omega_quality
    }
}

/// Cross-firm dispersion per year (population moments; percentiles by
/// linear interpolation).
pub fn dispersion_stats(years: &[i32], omega: &[f64], quality: &[f64]) -> Result<Vec<DispersionRow>> {
    check_lengths(years, &[omega, quality])?;
    by_year(years)
        .into_iter()
        .map(|(year, idx)| {
            if idx.len() < MIN_DISPERSION_FIRMS {
                return Err(Error::TooFewFirms { year, got: idx.len() });
            }
            let w: Vec<f64> = idx.iter().map(|&i| omega[i]).collect();
            let q: Vec<f64> = idx.iter().map(|&i| quality[i]).collect();
            let z: Vec<f64> = w.iter().zip(&q).map(|(a, b)| a + b).collect();
            let spread = |v: &[f64], lo: f64, hi: f64| quantile(v, hi) - quantile(v, lo);
            Ok(DispersionRow {
                year,
                n: idx.len(),
                var_z: variance(&z),
                var_omega: variance(&w),
                var_quality: variance(&q),
                cov_omega_quality: covariance(&w, &q),
                iqr: [spread(&z, 0.25, 0.75), spread(&w, 0.25, 0.75), spread(&q, 0.25, 0.75)],
                p90_p10: [spread(&z, 0.1, 0.9), spread(&w, 0.1, 0.9), spread(&q, 0.1, 0.9)],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub year: i32,
    pub series: String,
    pub value: f64,
}

/// Plot-ready long table. With `normalize`, each series is shifted to 0 in
/// its first year (presentation only).
pub fn long_series(series: &[(&str, Vec<(i32, f64)>)], normalize: bool) -> Vec<LongRow> {
    let mut out = Vec::new();
    for (name, points) in series {
        let base = if normalize { points.first().map_or(0.0, |p| p.1) } else { 0.0 };
        out.extend(points.iter().map(|&(year, v)| LongRow { year, series: name.to_string(), value: v - base }));
    }
    out
}

/// Unweighted per-year mean, for companion series.
pub fn yearly_mean(years: &[i32], values: &[f64]) -> Result<Vec<(i32, f64)>> {
    check_lengths(years, &[values])?;
    Ok(by_year(years)
        .into_iter()
        .map(|(y, idx)| (y, mean(&idx.iter().map(|&i| values[i]).collect::<Vec<_>>())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tfp(firm: u64, year: i32, omega: f64) -> TfpRow {
        TfpRow { firm_id: firm, sector: 0, year, omega_hat: omega, phi: 0.0, eps_hat: 0.0 }
    }

    #[test]
    fn shares_seventy_thirty() {
        let years = [2003, 2003];
        let ops = olley_pakes(&years, &[1.0, 0.0], &[0.7, 0.3]).unwrap();
        assert!((ops[0].aggregate - 0.7).abs() < 1e-15);
        assert!((ops[0].mean - 0.5).abs() < 1e-15);
        assert!((ops[0].cov - 0.2).abs() < 1e-15);
        assert_eq!(aggregate(&years, &[1.0, 0.0], &[0.7, 0.3]).unwrap(), vec![(2003, 0.7)]);
    }

    #[test]
    fn equal_shares_and_single_firm() {
        let years = [1, 1, 1, 1];
        let v = [0.3, -1.0, 2.0, 0.5];
        let op = &olley_pakes(&years, &v, &[0.25; 4]).unwrap()[0];
        assert!(op.cov.abs() < 1e-15 && (op.aggregate - 0.45).abs() < 1e-15);
        assert_eq!(aggregate(&[7], &[3.3], &[1.0]).unwrap(), vec![(7, 3.3)]);
    }

    #[test]
    fn unnormalized_shares_are_rejected() {
        assert!(matches!(
            aggregate(&[1, 1], &[1.0, 2.0], &[0.5, 0.6]),
            Err(Error::SharesNotNormalized { year: 1, .. })
        ));
        assert!(aggregate(&[1, 1], &[1.0, 2.0], &[0.5, 0.5 + 1e-9]).is_ok());
    }

    #[test]
    fn zero_quality_reduces_four_term_to_op() {
        let years = [1, 1, 1];
        let w = [0.1, 0.4, -0.2];
        let s = [0.5, 0.3, 0.2];
        let ft = &four_term(&years, &w, &[0.0; 3], &s).unwrap()[0];
        let op = &olley_pakes(&years, &w, &s).unwrap()[0];
        assert_eq!((ft.omega_mean, ft.omega_cov, ft.aggregate), (op.mean, op.cov, op.aggregate));
        assert_eq!((ft.quality_mean, ft.quality_cov), (0.0, 0.0));
    }

    #[test]
    fn growth_examples() {
        let flat: Vec<(i32, f64)> = (2003..=2015).map(|y| (y, 1.2)).collect();
        assert_eq!(growth_rates("z", &flat, &[(2003, 2015)]).unwrap()[0].rate, 0.0);
        let g = growth_rates("z", &[(2003, 0.0), (2015, -0.0456)], &[(2003, 2015)]).unwrap();
        assert!((g[0].rate + 0.38).abs() < 1e-12);
        assert!(matches!(growth_rates("z", &flat, &[(2003, 2016)]), Err(Error::WindowOutOfRange { .. })));
        assert!(growth_rates("z", &flat, &[(2008, 2003)]).is_err());
    }

    #[test]
    fn dispersion_of_constants_is_zero() {
        let years = [5; 12];
        let d = &dispersion_stats(&years, &[0.4; 12], &[1.0; 12]).unwrap()[0];
        assert!(d.var_z < 1e-30 && d.var_omega < 1e-30);
        assert_eq!((d.iqr[0], d.p90_p10[0]), (0.0, 0.0));
        assert!(matches!(dispersion_stats(&[5; 9], &[0.0; 9], &[0.0; 9]), Err(Error::TooFewFirms { year: 5, got: 9 })));
    }

    #[test]
    fn variants_differ_by_sector_constant() {
        let b0 = 0.37;
        let theta = 0.42;
        let tfps: Vec<TfpRow> = (0..20).map(|i| tfp(i, 2003, 0.01 * i as f64)).collect();
        let gaps: Vec<GapRow> = (0..20)
            .map(|i| {
                let ln_x = 0.1 * i as f64;
                let ox = 0.05 * ((i * 7) % 5) as f64;
                GapRow { firm_id: i, sector: 0, year: 2003, ln_x, ln_y: ln_x + b0 + ox }
            })
            .collect();
        let ox: Vec<OmegaXRow> =
            gaps.iter().map(|g| OmegaXRow { firm_id: g.firm_id, sector: 0, year: 2003, omega_x: g.gap() - b0 }).collect();
        let th = BTreeMap::from([(0, theta)]);
        let top = measured_productivity(&tfps, &gaps, &ox, &th, Variant::TopBased).unwrap();
        let non = measured_productivity(&tfps, &gaps, &ox, &th, Variant::NontopBased).unwrap();
        for (a, b) in top.iter().zip(&non) {
            assert!((a.z - b.z - theta * b0).abs() < 1e-12);
            assert_eq!(a.z, a.omega + a.quality);
        }
        let zero = measured_productivity(&tfps, &gaps, &ox, &BTreeMap::from([(0, 0.0)]), Variant::TopBased).unwrap();
        assert!(zero.iter().all(|r| r.z == r.omega));
        assert!(matches!(
            measured_productivity(&tfps, &gaps[1..], &ox, &th, Variant::TopBased),
            Err(Error::KeyMismatch(_))
        ));
    }

    #[test]
    fn cd_variant_closure() {
        let tfps: Vec<TfpRow> = (0..5).map(|i| tfp(i, 2003, 0.2 * i as f64)).collect();
        let gaps: Vec<GapRow> =
            (0..5).map(|i| GapRow { firm_id: i, sector: 0, year: 2003, ln_x: 0.3 * i as f64, ln_y: 1.0 + 0.5 * i as f64 }).collect();
        let rows = cd_measured_productivity(&tfps, &gaps, &BTreeMap::from([(0, (0.3, 0.2))])).unwrap();
        assert!(rows.iter().all(|r| (r.z - r.eta - r.x_part - r.y_part).abs() < 1e-12));
        let zero = cd_measured_productivity(&tfps, &gaps, &BTreeMap::from([(0, (0.0, 0.0))])).unwrap();
        assert!(zero.iter().all(|r| r.z == r.eta));
    }

    #[test]
    fn normalized_long_series_starts_at_zero() {
        let rows = long_series(&[("z", vec![(2003, 1.5), (2004, 1.7)])], true);
        assert_eq!(rows[0].value, 0.0);
        assert!((rows[1].value - 0.2).abs() < 1e-15);
    }
}

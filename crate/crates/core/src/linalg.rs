//! Dense least squares shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size below which a column counts as a linear combination of the
/// columns before it.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// One coefficient per design column; zero for dropped columns.
    pub coef: Vec<f64>,
    /// Conventional OLS standard errors; NaN for dropped columns.
    pub se: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Centred R^2.
    pub r2: f64,
    pub sigma2: f64,
    /// Columns removed as linearly dependent on earlier ones.
    pub dropped: Vec<usize>,
}

/// OLS by Householder QR. Columns whose component orthogonal to the earlier
/// columns is negligible are dropped and reported.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::KeyMismatch(format!("design has {n} rows, response {}", y.len())));
    }
    let norms: Vec<f64> = (0..k).map(|j| x.column(j).norm()).collect();
    let r = x.clone().qr().r();
    let mut dropped = Vec::new();
    for j in 0..k.min(n) {
        if norms[j] == 0.0 || r[(j, j)].abs() <= DEPENDENCE_TOL * norms[j] {
            dropped.push(j);
        }
    }
    dropped.extend(n.min(k)..k);
    let kept: Vec<usize> = (0..k).filter(|j| !dropped.contains(j)).collect();
    if kept.is_empty() {
        return Err(Error::RankDeficient("every column is degenerate".into()));
    }
    if n <= kept.len() {
        return Err(Error::TooFewObservations { got: n, need: kept.len() + 1 });
    }

    let xk = x.select_columns(&kept);
    let qr = xk.qr();
    let (q, r) = (qr.q(), qr.r());
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    let fitted = &q * &qty;
    let residuals: Vec<f64> = yv.iter().zip(fitted.iter()).map(|(a, f)| a - f).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sigma2 = rss / (n - kept.len()) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(kept.len(), kept.len()))
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;

    let mut coef = vec![0.0; k];
    let mut se = vec![f64::NAN; k];
    for (i, &j) in kept.iter().enumerate() {
        coef[j] = b[i];
        se[j] = (sigma2 * r_inv.row(i).norm_squared()).sqrt();
    }
    Ok(OlsFit {
        coef,
        se,
        fitted: fitted.iter().copied().collect(),
        residuals,
        r2: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        sigma2,
        dropped,
    })
}

/// OLS of `y` on an intercept and one regressor.
pub fn simple_regression(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() < 3 {
        return Err(Error::TooFewObservations { got: x.len(), need: 3 });
    }
    let design = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let fit = ols(&design, y)?;
    if fit.dropped.contains(&1) {
        return Err(Error::RankDeficient("regressor has no variation".into()));
    }
    Ok(fit)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Population covariance.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    covariance(a, b) / (variance(a) * variance(b)).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear interpolation between order statistics (`(n-1) p` positions).
pub fn quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Sample standard deviation.
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

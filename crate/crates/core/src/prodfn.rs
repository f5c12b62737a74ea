//! Two-stage proxy-variable estimation of the production function.
//!
//! Stage 1 regresses log output on a full polynomial in the logs of the
//! inputs, the proxy (intermediates) and prices; the fitted value `phi`
//! strips measurement error. Stage 2 runs GMM on the AR(1) innovation of
//! productivity
//!
//! `e_t = ln f_t - z_t'b - rho (phi_{t-1} - z_{t-1}'b)`
//!
//! with lagged instruments and current capital. The moments are bilinear in
//! `(b, rho)`, so they are precomputed once and the objective is minimized
//! by Levenberg-Marquardt from several starts.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::akm::FirmQuality;
use crate::error::{Error, Result};
use crate::linalg::{ols, sample_sd};
use crate::params::ProductionForm;
use crate::rng::substream;
use crate::synth::FirmYear;

/// One firm-year in logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfRow {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub ln_f: f64,
    pub ln_x: f64,
    pub ln_y: f64,
    pub ln_l: f64,
    pub ln_k: f64,
    pub ln_m: f64,
    pub ln_pg: f64,
    pub ln_pm: f64,
}

/// Rows built from the simulated truth, sorted by firm and year.
pub fn rows_from_truth(firms: &[FirmYear]) -> Vec<PfRow> {
    let mut rows: Vec<PfRow> = firms
        .iter()
        .map(|r| PfRow {
            firm_id: r.firm_id,
            sector: r.sector,
            year: r.year,
            ln_f: r.f.ln(),
            ln_x: r.x.ln(),
            ln_y: r.y.ln(),
            ln_l: r.l.ln(),
            ln_k: r.k.ln(),
            ln_m: r.m.ln(),
            ln_pg: r.p_g.ln(),
            ln_pm: r.p_m.ln(),
        })
        .collect();
    rows.sort_by_key(|r| (r.firm_id, r.year));
    rows
}

/// Join the firm table with estimated qualities (inner join on firm-year).
/// Returns the rows and the number of firm-years without a quality record.
pub fn rows_from_quality(firms: &[FirmYear], quality: &[FirmQuality]) -> Result<(Vec<PfRow>, usize)> {
    let q: BTreeMap<(u64, i32), &FirmQuality> = quality.iter().map(|r| ((r.firm_id, r.year), r)).collect();
    let mut missing = 0;
    let mut rows = Vec::with_capacity(quality.len());
    for r in firms {
        match q.get(&(r.firm_id, r.year)) {
            Some(fq) => rows.push(PfRow {
                firm_id: r.firm_id,
                sector: r.sector,
                year: r.year,
                ln_f: r.f.ln(),
                ln_x: fq.ln_x,
                ln_y: fq.ln_y,
                ln_l: r.l.ln(),
                ln_k: r.k.ln(),
                ln_m: r.m.ln(),
                ln_pg: r.p_g.ln(),
                ln_pm: r.p_m.ln(),
            }),
            None => missing += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::KeyMismatch("no firm-year has a quality record".into()));
    }
    rows.sort_by_key(|r| (r.firm_id, r.year));
    Ok((rows, missing))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Identity,
    #[serde(alias = "two-step")]
    TwoStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfOptions {
    pub form: ProductionForm,
    pub degree: usize,
    pub weighting: Weighting,
    /// Add lagged log prices to the instrument set.
    pub price_instruments: bool,
    pub n_starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            form: ProductionForm::Ces,
            degree: 3,
            weighting: Weighting::Identity,
            price_instruments: false,
            n_starts: 8,
            max_iter: 500,
            grad_tol: 1e-8,
            bootstrap: 0,
            seed: 1,
        }
    }
}

fn regressors(form: ProductionForm, r: &PfRow) -> Vec<f64> {
    match form {
        ProductionForm::Ces => vec![1.0, r.ln_y, r.ln_l, r.ln_k],
        ProductionForm::Cd => vec![1.0, r.ln_x, r.ln_y, r.ln_l, r.ln_k],
    }
}

/// Names of the stage-2 parameters in estimation order.
pub fn coefficient_names(form: ProductionForm) -> &'static [&'static str] {
    match form {
        ProductionForm::Ces => &["beta_0", "theta", "alpha_l", "alpha_k", "rho"],
        ProductionForm::Cd => &["beta_0", "beta_x", "beta_y", "alpha_l", "alpha_k", "rho"],
    }
}

fn proxy_variables(form: ProductionForm, r: &PfRow) -> Vec<f64> {
    let mut v = vec![r.ln_y, r.ln_l, r.ln_k, r.ln_m, r.ln_pg, r.ln_pm];
    if form == ProductionForm::Cd {
        v.push(r.ln_x);
    }
    v
}

/// All exponent vectors over `n` variables with total degree in `1..=degree`,
/// graded then lexicographic.
pub fn monomial_exponents(n: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(n, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 1..=degree {
        rec(n, d, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1 {
    pub phi: Vec<f64>,
    /// Stage-1 residuals (measurement error).
    pub eps: Vec<f64>,
    pub r2: f64,
    pub n_columns: usize,
    pub dropped_columns: Vec<usize>,
}

/// Polynomial regression of `ln f` on the proxy variables (intercept plus
/// all monomials up to `degree` of the standardized logs).
pub fn stage1(rows: &[PfRow], form: ProductionForm, degree: usize) -> Result<Stage1> {
    if degree == 0 {
        return Err(Error::ConfigError("stage-1 degree must be >= 1".into()));
    }
    let vars: Vec<Vec<f64>> = rows.iter().map(|r| proxy_variables(form, r)).collect();
    let nv = vars.first().map_or(0, |v| v.len());
    let n = rows.len();
    let mut centre = vec![0.0; nv];
    let mut scale = vec![1.0; nv];
    if n > 1 {
        for k in 0..nv {
            let col: Vec<f64> = vars.iter().map(|v| v[k]).collect();
            centre[k] = col.iter().sum::<f64>() / n as f64;
            let sd = sample_sd(&col);
            if sd > 0.0 {
                scale[k] = sd;
            }
        }
    }
    let exps = monomial_exponents(nv, degree);
    let k = exps.len() + 1;
    let design = DMatrix::from_fn(n, k, |i, j| {
        if j == 0 {
            return 1.0;
        }
        exps[j - 1]
            .iter()
            .enumerate()
            .map(|(v, &e)| ((vars[i][v] - centre[v]) / scale[v]).powi(e as i32))
            .product()
    });
    let y: Vec<f64> = rows.iter().map(|r| r.ln_f).collect();
    let fit = ols(&design, &y)?;
    Ok(Stage1 { phi: fit.fitted, eps: fit.residuals, r2: fit.r2, n_columns: k, dropped_columns: fit.dropped })
}

/// Precomputed bilinear moments `g(b, rho) = a - Z b - rho c + rho Zl b`.
#[derive(Debug, Clone)]
struct Moments {
    a: DVector<f64>,
    z: DMatrix<f64>,
    c: DVector<f64>,
    zl: DMatrix<f64>,
    n: usize,
    /// Per-observation instrument vectors and data for weighting updates.
    obs: Vec<(DVector<f64>, f64, DVector<f64>, f64, DVector<f64>)>,
}

impl Moments {
    fn g(&self, p: &DVector<f64>) -> DVector<f64> {
        let k = self.z.ncols();
        let b = p.rows(0, k);
        let rho = p[k];
        &self.a - &self.z * b - rho * &self.c + rho * (&self.zl * b)
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let k = self.z.ncols();
        let b = p.rows(0, k);
        let rho = p[k];
        let mut j = DMatrix::zeros(self.a.len(), k + 1);
        j.columns_mut(0, k).copy_from(&(-&self.z + rho * &self.zl));
        j.set_column(k, &(-&self.c + &self.zl * b));
        j
    }

    /// Per-observation residuals at `p`.
    fn residuals(&self, p: &DVector<f64>) -> Vec<f64> {
        let k = self.z.ncols();
        let b = p.rows(0, k).into_owned();
        let rho = p[k];
        self.obs
            .iter()
            .map(|(_, lf, z, phil, zl)| lf - z.dot(&b) - rho * (phil - zl.dot(&b)))
            .collect()
    }
}

/// Consecutive-year pairs `(t-1, t)` within the same firm.
fn lag_pairs(rows: &[PfRow]) -> Vec<(usize, usize)> {
    (1..rows.len())
        .filter(|&i| rows[i].firm_id == rows[i - 1].firm_id && rows[i].year == rows[i - 1].year + 1)
        .map(|i| (i - 1, i))
        .collect()
}

fn instruments(form: ProductionForm, prices: bool, prev: &PfRow, cur: &PfRow, phi_prev: f64) -> Vec<f64> {
    let mut v = vec![1.0, phi_prev, prev.ln_m, prev.ln_y, prev.ln_l, cur.ln_k];
    if form == ProductionForm::Cd {
        v.push(prev.ln_x);
    }
    if prices {
        v.push(prev.ln_pg);
        v.push(prev.ln_pm);
    }
    v
}

fn build_moments(rows: &[PfRow], phi: &[f64], opts: &PfOptions) -> Result<Moments> {
    let pairs = lag_pairs(rows);
    let kz = regressors(opts.form, &rows[0]).len();
    let n_inst = instruments(opts.form, opts.price_instruments, &rows[0], &rows[0], 0.0).len();
    if pairs.len() < n_inst + kz + 1 {
        return Err(Error::InsufficientPanel(format!(
            "{} consecutive year pairs, need at least {}",
            pairs.len(),
            n_inst + kz + 1
        )));
    }
    let n = pairs.len() as f64;
    // Non-constant instruments are centred, so a location shift in any of
    // them (such as a shift of ln f moving phi) leaves the identity-weighted
    // objective unchanged.
    let raw: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(p, t)| instruments(opts.form, opts.price_instruments, &rows[p], &rows[t], phi[p]))
        .collect();
    let mut centre = vec![0.0; n_inst];
    for (j, c) in centre.iter_mut().enumerate().skip(1) {
        *c = raw.iter().map(|v| v[j]).sum::<f64>() / n;
    }
    let mut a = DVector::zeros(n_inst);
    let mut z = DMatrix::zeros(n_inst, kz);
    let mut c = DVector::zeros(n_inst);
    let mut zl = DMatrix::zeros(n_inst, kz);
    let mut obs = Vec::with_capacity(pairs.len());
    for (&(p, t), v) in pairs.iter().zip(&raw) {
        let inst = DVector::from_fn(n_inst, |j, _| v[j] - centre[j]);
        let zt = DVector::from_vec(regressors(opts.form, &rows[t]));
        let zp = DVector::from_vec(regressors(opts.form, &rows[p]));
        a += &inst * (rows[t].ln_f / n);
        z += &inst * zt.transpose() / n;
        c += &inst * (phi[p] / n);
        zl += &inst * zp.transpose() / n;
        obs.push((inst, rows[t].ln_f, zt, phi[p], zp));
    }
    Ok(Moments { a, z, c, zl, n: pairs.len(), obs })
}

#[derive(Debug, Clone)]
struct LmResult {
    p: DVector<f64>,
    objective: f64,
    grad_norm: f64,
    converged: bool,
}

/// Levenberg-Marquardt on `Q(p) = g' W g`, with `W = L L'`.
fn levenberg_marquardt(m: &Moments, w_chol: &DMatrix<f64>, start: DVector<f64>, opts: &PfOptions) -> LmResult {
    let wt = w_chol.transpose();
    let resid = |p: &DVector<f64>| &wt * m.g(p);
    let mut p = start;
    let mut r = resid(&p);
    let mut q = r.norm_squared();
    let mut mu = 1e-3;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let j = &wt * m.jacobian(&p);
        let grad = 2.0 * j.transpose() * &r;
        grad_norm = grad.norm();
        if grad_norm < opts.grad_tol {
            return LmResult { p, objective: q, grad_norm, converged: true };
        }
        let jtj = j.transpose() * &j;
        let rhs = -(j.transpose() * &r);
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&rhs) else {
                mu *= 10.0;
                continue;
            };
            let cand = &p + &step;
            let rc = resid(&cand);
            let qc = rc.norm_squared();
            if qc.is_finite() && qc <= q {
                let small = step.norm() <= 1e-15 * (1.0 + p.norm());
                p = cand;
                r = rc;
                q = qc;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                if small {
                    let j = &wt * m.jacobian(&p);
                    grad_norm = (2.0 * j.transpose() * &r).norm();
                    return LmResult { p, objective: q, grad_norm, converged: grad_norm < opts.grad_tol.sqrt() };
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    LmResult { converged: grad_norm < opts.grad_tol, p, objective: q, grad_norm }
}

fn starting_values(rows: &[PfRow], phi: &[f64], form: ProductionForm) -> Result<DVector<f64>> {
    let kz = regressors(form, &rows[0]).len();
    let design = DMatrix::from_fn(rows.len(), kz, |i, j| regressors(form, &rows[i])[j]);
    let y: Vec<f64> = rows.iter().map(|r| r.ln_f).collect();
    let fit = ols(&design, &y)?;
    let omega: Vec<f64> = phi
        .iter()
        .zip(rows)
        .map(|(f, r)| f - regressors(form, r).iter().zip(&fit.coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let pairs = lag_pairs(rows);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    let lag: Vec<f64> = pairs.iter().map(|&(p, _)| omega[p]).collect();
    let cur: Vec<f64> = pairs.iter().map(|&(_, t)| omega[t]).collect();
    let (ml, mc) = (lag.iter().sum::<f64>() / lag.len() as f64, cur.iter().sum::<f64>() / cur.len() as f64);
    for (a, b) in lag.iter().zip(&cur) {
        sxy += (a - ml) * (b - mc);
        sxx += (a - ml) * (a - ml);
    }
    let rho = if sxx > 0.0 { (sxy / sxx).clamp(-0.95, 0.95) } else { 0.0 };
    let mut v = fit.coef.clone();
    v.push(rho);
    Ok(DVector::from_vec(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Fit {
    /// Coefficients in [`coefficient_names`] order.
    pub coef: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub n_pairs: usize,
}

/// For fixed `rho` the moments are linear in `b`, so `b` is a weighted
/// least-squares solution. Returns `(rho, b, Q)` on a grid over (-1, 1).
fn rho_profile(m: &Moments, w_chol: &DMatrix<f64>) -> Vec<(f64, DVector<f64>, f64)> {
    let wt = w_chol.transpose();
    (-49..=49)
        .filter_map(|i| {
            let rho = i as f64 / 50.0;
            let lhs = &wt * (&m.z - rho * &m.zl);
            let rhs = &wt * (&m.a - rho * &m.c);
            let b = lhs.clone().svd(true, true).solve(&rhs, 1e-12).ok()?;
            let q = (&rhs - &lhs * &b).norm_squared();
            Some((rho, b, q))
        })
        .collect()
}

fn multistart(m: &Moments, w_chol: &DMatrix<f64>, start: &DVector<f64>, opts: &PfOptions) -> LmResult {
    let mut best = levenberg_marquardt(m, w_chol, start.clone(), opts);
    let mut rng = substream(opts.seed, &[0x5747]);
    for _ in 0..opts.n_starts {
        let mut s = start.clone();
        for v in s.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += 0.1 * z;
        }
        let last = s.len() - 1;
        s[last] = s[last].clamp(-0.95, 0.95);
        let cand = levenberg_marquardt(m, w_chol, s, opts);
        if cand.objective < best.objective {
            best = cand;
        }
    }
    best
}

/// GMM on the productivity innovation for a single sector.
pub fn stage2(rows: &[PfRow], phi: &[f64], opts: &PfOptions) -> Result<Stage2Fit> {
    if rows.is_empty() || phi.len() != rows.len() {
        return Err(Error::InsufficientPanel("empty panel or misaligned stage-1 values".into()));
    }
    let m = build_moments(rows, phi, opts)?;
    let start = starting_values(rows, phi, opts.form)?;
    let identity = DMatrix::identity(m.a.len(), m.a.len());
    let mut best = multistart(&m, &identity, &start, opts);
    if opts.weighting == Weighting::TwoStep {
        let e = m.residuals(&best.p);
        let mut s = DMatrix::zeros(m.a.len(), m.a.len());
        for ((inst, ..), ei) in m.obs.iter().zip(&e) {
            let v = inst * *ei;
            s += &v * v.transpose() / m.n as f64;
        }
        let w = s
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient("moment covariance is singular".into()))?;
        let chol = w
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("weighting matrix is not positive definite".into()))?;
        best = multistart(&m, &chol.l(), &best.p, opts);
    }
    if !best.objective.is_finite() {
        return Err(Error::NoConvergence("objective is not finite".into()));
    }
    Ok(Stage2Fit {
        coef: best.p.iter().copied().collect(),
        objective: best.objective,
        grad_norm: best.grad_norm,
        converged: best.converged,
        n_pairs: m.n,
    })
}

/// Identity-weighted Levenberg-Marquardt from a given start, without
/// multistart. Useful for warm starts and for checking which root a
/// start converges to.
pub fn stage2_from(rows: &[PfRow], phi: &[f64], opts: &PfOptions, start: &[f64]) -> Result<Stage2Fit> {
    let m = build_moments(rows, phi, opts)?;
    if start.len() != m.z.ncols() + 1 {
        return Err(Error::InvalidParam(format!("start has {} entries, need {}", start.len(), m.z.ncols() + 1)));
    }
    let w = DMatrix::identity(m.a.len(), m.a.len());
    let r = levenberg_marquardt(&m, &w, DVector::from_column_slice(start), opts);
    Ok(Stage2Fit {
        coef: r.p.iter().copied().collect(),
        objective: r.objective,
        grad_norm: r.grad_norm,
        converged: r.converged,
        n_pairs: m.n,
    })
}

/// Identity-weighted objective profiled over `rho`: `(rho, Q(rho))`.
pub fn stage2_rho_profile(rows: &[PfRow], phi: &[f64], opts: &PfOptions) -> Result<Vec<(f64, f64)>> {
    let m = build_moments(rows, phi, opts)?;
    let w = DMatrix::identity(m.a.len(), m.a.len());
    Ok(rho_profile(&m, &w).into_iter().map(|(r, _, q)| (r, q)).collect())
}

/// Identity-weighted objective at a given parameter vector.
pub fn stage2_objective(rows: &[PfRow], phi: &[f64], opts: &PfOptions, coef: &[f64]) -> Result<f64> {
    let m = build_moments(rows, phi, opts)?;
    Ok(m.g(&DVector::from_column_slice(coef)).norm_squared())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfEstimate {
    pub sector: u32,
    pub form: ProductionForm,
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Bootstrap standard errors; empty when no bootstrap was run.
    pub se: Vec<f64>,
    pub n_obs: usize,
    pub n_pairs: usize,
    pub objective: f64,
    pub converged: bool,
    pub stage1_r2: f64,
    pub bootstrap_reps: usize,
}

impl PfEstimate {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).and_then(|i| self.se.get(i).copied())
    }

    /// Coefficients on `(1, regressors)`, without `rho`.
    pub fn slopes(&self) -> &[f64] {
        &self.coef[..self.coef.len() - 1]
    }
}

fn fit_once(rows: &[PfRow], opts: &PfOptions) -> Result<(Stage1, Stage2Fit)> {
    let s1 = stage1(rows, opts.form, opts.degree)?;
    let s2 = stage2(rows, &s1.phi, opts)?;
    Ok((s1, s2))
}

/// Resample firms with replacement (all years of a firm together); copies
/// get fresh ids so they stay distinct panels.
fn resample(rows: &[PfRow], firms: &[(usize, usize)], seed: u64, rep: usize) -> Vec<PfRow> {
    let mut rng = substream(seed, &[0xB007, rep as u64]);
    let mut out = Vec::with_capacity(rows.len());
    for copy in 0..firms.len() {
        let (lo, hi) = firms[rng.random_range(0..firms.len())];
        for r in &rows[lo..hi] {
            let mut r = r.clone();
            r.firm_id = copy as u64;
            out.push(r);
        }
    }
    out
}

fn firm_blocks(rows: &[PfRow]) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut lo = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].firm_id != rows[lo].firm_id {
            blocks.push((lo, i));
            lo = i;
        }
    }
    blocks
}

/// Minimum share of bootstrap replicates that must succeed.
pub const MIN_BOOTSTRAP_SUCCESS: f64 = 0.8;

/// Bootstrap standard errors of all stage-2 coefficients.
pub fn bootstrap_se(rows: &[PfRow], opts: &PfOptions, reps: usize) -> Result<Vec<f64>> {
    if reps < 2 {
        return Err(Error::Bootstrap(format!("need at least 2 replicates, got {reps}")));
    }
    let blocks = firm_blocks(rows);
    let run = |b: usize| -> Option<Vec<f64>> {
        let sample = resample(rows, &blocks, opts.seed, b);
        let o = PfOptions { n_starts: opts.n_starts.min(2), ..opts.clone() };
        fit_once(&sample, &o).ok().map(|(_, s2)| s2.coef)
    };
    #[cfg(feature = "parallel")]
    let draws: Vec<Option<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..reps).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<Option<Vec<f64>>> = (0..reps).map(run).collect();

    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    if (ok.len() as f64) < MIN_BOOTSTRAP_SUCCESS * reps as f64 || ok.len() < 2 {
        return Err(Error::Bootstrap(format!("only {} of {reps} replicates succeeded", ok.len())));
    }
    let k = ok[0].len();
    Ok((0..k)
        .map(|j| sample_sd(&ok.iter().map(|c| c[j]).collect::<Vec<_>>()))
        .collect())
}

/// Stage 1, stage 2 and (optionally) bootstrap for one sector's rows.
pub fn estimate_sector(rows: &[PfRow], opts: &PfOptions) -> Result<(PfEstimate, Stage1)> {
    let sector = rows.first().map(|r| r.sector).ok_or_else(|| Error::InsufficientPanel("empty sector".into()))?;
    let (s1, s2) = fit_once(rows, opts)?;
    let se = if opts.bootstrap > 0 { bootstrap_se(rows, opts, opts.bootstrap)? } else { Vec::new() };
    Ok((
        PfEstimate {
            sector,
            form: opts.form,
            names: coefficient_names(opts.form).iter().map(|s| s.to_string()).collect(),
            coef: s2.coef,
            se,
            n_obs: rows.len(),
            n_pairs: s2.n_pairs,
            objective: s2.objective,
            converged: s2.converged,
            stage1_r2: s1.r2,
            bootstrap_reps: opts.bootstrap,
        },
        s1,
    ))
}

/// Split rows (sorted by firm, year) by sector, keeping order.
pub fn by_sector(rows: &[PfRow]) -> BTreeMap<u32, Vec<PfRow>> {
    let mut out: BTreeMap<u32, Vec<PfRow>> = BTreeMap::new();
    for r in rows {
        out.entry(r.sector).or_default().push(r.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfpRow {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub omega_hat: f64,
    pub phi: f64,
    pub eps_hat: f64,
}

/// `omega = phi - z'b` with each row's sector coefficients.
pub fn recover_tfp(rows: &[PfRow], phi: &[f64], estimates: &[PfEstimate]) -> Result<Vec<f64>> {
    if phi.len() != rows.len() {
        return Err(Error::KeyMismatch("stage-1 values do not align with rows".into()));
    }
    let by: BTreeMap<u32, &PfEstimate> = estimates.iter().map(|e| (e.sector, e)).collect();
    rows.iter()
        .zip(phi)
        .map(|(r, &f)| {
            let e = by.get(&r.sector).ok_or(Error::MissingCoefficients(r.sector))?;
            let z = regressors(e.form, r);
            Ok(f - z.iter().zip(e.slopes()).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect()
}

/// Per-sector estimation over a multi-sector panel, returning estimates and
/// the TFP series (rows ordered like the input).
pub fn estimate_all(rows: &[PfRow], opts: &PfOptions) -> Result<(Vec<PfEstimate>, Vec<TfpRow>)> {
    let mut estimates = Vec::new();
    let mut tfp = Vec::with_capacity(rows.len());
    for (sector, srows) in by_sector(rows) {
        let (est, s1) = estimate_sector(&srows, opts).map_err(|e| e.in_stage(&format!("sector {sector}")))?;
        let omega = recover_tfp(&srows, &s1.phi, std::slice::from_ref(&est))?;
        for (i, r) in srows.iter().enumerate() {
            tfp.push(TfpRow {
                firm_id: r.firm_id,
                sector,
                year: r.year,
                omega_hat: omega[i],
                phi: s1.phi[i],
                eps_hat: s1.eps[i],
            });
        }
        estimates.push(est);
    }
    tfp.sort_by_key(|r| (r.firm_id, r.year));
    Ok((estimates, tfp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use crate::synth::{simulate_firm_panel, SimConfig};

    fn panel(n_firms: usize, years: usize, eps: f64, seed: u64) -> Vec<PfRow> {
        let p = ModelParams { sigma_eps: eps, ..ModelParams::construction() };
        let cfg = SimConfig { n_firms, years, seed, params: vec![p], ..SimConfig::default() };
        rows_from_truth(&simulate_firm_panel(&cfg).unwrap())
    }

    /// No measurement error and no TFP innovations; firms keep their
    /// initial TFP draw decaying at rate rho.
    fn noiseless_cfg(n_firms: usize, years: usize, seed: u64) -> SimConfig {
        let p = ModelParams { sigma_eps: 0.0, sigma_xi: 0.0, ..ModelParams::construction() };
        SimConfig { n_firms, years, seed, initial_omega_sd: Some(0.3), params: vec![p], ..SimConfig::default() }
    }

    fn truth() -> Vec<f64> {
        let p = ModelParams::construction();
        vec![p.beta_0, p.theta, p.alpha_l, p.alpha_k, p.rho]
    }

    #[test]
    fn monomial_count() {
        assert_eq!(monomial_exponents(6, 3).len(), 83);
        assert_eq!(monomial_exponents(7, 3).len(), 119);
        assert_eq!(monomial_exponents(2, 2), vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn noiseless_stage1_is_exact() {
        let rows = panel(200, 6, 0.0, 3);
        let s1 = stage1(&rows, ProductionForm::Ces, 3).unwrap();
        assert!((s1.r2 - 1.0).abs() < 1e-10, "{}", s1.r2);
    }

    #[test]
    fn stage1_residual_variance_matches_noise() {
        let rows = panel(1000, 8, 0.1, 13);
        let s1 = stage1(&rows, ProductionForm::Ces, 3).unwrap();
        let v = crate::linalg::variance(&s1.eps);
        assert!((v / 0.01 - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn truth_minimizes_noiseless_objective() {
        let rows = rows_from_truth(&simulate_firm_panel(&noiseless_cfg(300, 8, 4)).unwrap());
        let s1 = stage1(&rows, ProductionForm::Ces, 3).unwrap();
        let opts = PfOptions::default();
        let t = truth();
        let q0 = stage2_objective(&rows, &s1.phi, &opts, &t).unwrap();
        assert!(q0 < 1e-10, "{q0}");
        let mut rng = substream(9, &[]);
        for _ in 0..100 {
            let mut d: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v *= 0.05 / norm);
            let cand: Vec<f64> = t.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert!(stage2_objective(&rows, &s1.phi, &opts, &cand).unwrap() >= q0);
        }
    }

    #[test]
    fn noiseless_bootstrap_is_degenerate() {
        let rows = rows_from_truth(&simulate_firm_panel(&noiseless_cfg(200, 6, 12)).unwrap());
        let opts = PfOptions { bootstrap: 10, ..PfOptions::default() };
        let (est, _) = estimate_sector(&rows, &opts).unwrap();
        for (c, t) in est.coef.iter().zip(truth()) {
            assert!((c - t).abs() < 1e-4, "{c} vs {t}");
        }
        assert!(est.se.iter().all(|&s| (0.0..1e-3).contains(&s)), "{:?}", est.se);
    }

    #[test]
    fn recovers_parameters() {
        let rows = panel(1000, 10, 0.1, 5);
        let (est, _) = estimate_sector(&rows, &PfOptions::default()).unwrap();
        let p = ModelParams::construction();
        for (name, truth) in [("theta", p.theta), ("alpha_l", p.alpha_l), ("alpha_k", p.alpha_k), ("rho", p.rho)] {
            let v = est.get(name).unwrap();
            assert!((v - truth).abs() < 0.05, "{name}: {v} vs {truth}");
        }
    }

    #[test]
    fn tfp_at_truth_is_exact_without_noise() {
        let cfg = noiseless_cfg(100, 5, 6);
        let firms = simulate_firm_panel(&cfg).unwrap();
        let rows = rows_from_truth(&firms);
        let s1 = stage1(&rows, ProductionForm::Ces, 3).unwrap();
        let est = PfEstimate {
            sector: 0,
            form: ProductionForm::Ces,
            names: vec![],
            coef: truth(),
            se: vec![],
            n_obs: 0,
            n_pairs: 0,
            objective: 0.0,
            converged: true,
            stage1_r2: 1.0,
            bootstrap_reps: 0,
        };
        let omega = recover_tfp(&rows, &s1.phi, &[est.clone()]).unwrap();
        let mut truth: Vec<(u64, i32, f64)> = firms.iter().map(|r| (r.firm_id, r.year, r.omega)).collect();
        truth.sort_by_key(|t| (t.0, t.1));
        for (o, t) in omega.iter().zip(&truth) {
            assert!((o - t.2).abs() < 1e-8);
        }
        let mut shifted = est;
        shifted.coef[0] += 0.3;
        let o2 = recover_tfp(&rows, &s1.phi, &[shifted]).unwrap();
        assert!(o2.iter().zip(&omega).all(|(a, b)| (a - b + 0.3).abs() < 1e-12));
        assert_eq!(recover_tfp(&rows, &s1.phi, &[]).unwrap_err(), Error::MissingCoefficients(0));
    }

    #[test]
    fn bootstrap_needs_two_replicates() {
        let rows = panel(50, 5, 0.1, 7);
        assert!(matches!(bootstrap_se(&rows, &PfOptions::default(), 1), Err(Error::Bootstrap(_))));
    }

    #[test]
    fn short_panel_is_insufficient() {
        let rows = panel(3, 3, 0.1, 8);
        let s1 = vec![0.0; rows.len()];
        assert!(matches!(stage2(&rows, &s1, &PfOptions::default()), Err(Error::InsufficientPanel(_))));
    }
}

//! Browser bindings. Every export takes plain numbers or a JSON string and
//! returns a JSON string; failures come back as `{"error": "..."}`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

use matchprod::aggdecomp::{four_term, shares_within_year};
use matchprod::model::Equilibrium;
use matchprod::paretofit::rank_regression;
use matchprod::rng::substream;
use matchprod::synth::{draw_pareto, simulate_firm_panel, SimConfig};
use matchprod::{ModelParams, Result};

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct CurveInput {
    pub theta: f64,
    pub alpha_l: f64,
    pub alpha_x: f64,
    pub sigma: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub omega_x: f64,
    pub x_max: f64,
    pub points: usize,
}

impl Default for CurveInput {
    fn default() -> Self {
        let p = ModelParams::construction();
        CurveInput {
            theta: p.theta,
            alpha_l: p.alpha_l,
            alpha_x: p.alpha_x,
            sigma: p.sigma,
            lambda_x: p.lambda_x,
            lambda_y: p.lambda_y,
            omega_x: 0.0,
            x_max: 20.0,
            points: 60,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub psi: f64,
    pub b0: f64,
    pub wage_elasticity: f64,
    pub x: Vec<f64>,
    pub top: Vec<f64>,
    pub labor: Vec<f64>,
    pub wage: Vec<f64>,
}

/// Matching function, labor demand and wage over a log grid of `x`.
pub fn curves(input: &CurveInput) -> Result<Curves> {
    let p = ModelParams {
        theta: input.theta,
        alpha_l: input.alpha_l,
        alpha_x: input.alpha_x,
        alpha_y: 1.0 - input.alpha_x,
        sigma: input.sigma,
        lambda_x: input.lambda_x,
        lambda_y: input.lambda_y,
        ..ModelParams::construction()
    };
    let eq = Equilibrium::new(p)?;
    let n = input.points.clamp(2, 1000);
    let hi = input.x_max.max(1.0 + 1e-9).ln();
    let x: Vec<f64> = (0..n).map(|i| (hi * i as f64 / (n - 1) as f64).exp()).collect();
    let mut out = Curves {
        psi: eq.constants.psi,
        b0: eq.constants.b0,
        wage_elasticity: eq.wage_elasticity(),
        x: Vec::with_capacity(n),
        top: Vec::with_capacity(n),
        labor: Vec::with_capacity(n),
        wage: Vec::with_capacity(n),
    };
    for v in x {
        out.top.push(eq.match_t(v, input.omega_x)?);
        out.labor.push(eq.labor_demand(v, input.omega_x)?);
        out.wage.push(eq.wage(v, 0.0, input.omega_x)?);
        out.x.push(v);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct TailDemo {
    pub lambda_hat: f64,
    pub standard_error: f64,
    pub r_squared: f64,
    pub intercept: f64,
    pub n_used: usize,
    /// `(ln value, ln rank)` of up to 400 sorted draws.
    pub points: Vec<(f64, f64)>,
}

/// Pareto draws whose bottom `contamination` share is squashed toward the
/// minimum, then a thresholded log-rank fit.
pub fn tail_demo(lambda: f64, n: usize, threshold: f64, contamination: f64, seed: u64) -> Result<TailDemo> {
    let mut rng = substream(seed, &[7]);
    let mut v = draw_pareto(lambda, 1.0, n.clamp(10, 200_000), 1.0, &mut rng)?;
    v.sort_by(|a, b| b.total_cmp(a));
    let cut = ((1.0 - contamination.clamp(0.0, 0.9)) * v.len() as f64) as usize;
    for x in v[cut..].iter_mut() {
        *x = x.sqrt();
    }
    v.sort_by(|a, b| b.total_cmp(a));
    let fit = rank_regression(&v, threshold)?;
    let step = (v.len() / 400).max(1);
    let points = v.iter().enumerate().step_by(step).map(|(i, x)| (x.ln(), (i as f64 + 0.5).ln())).collect();
    Ok(TailDemo {
        lambda_hat: fit.lambda_hat,
        standard_error: fit.standard_error,
        r_squared: fit.r_squared,
        intercept: fit.intercept,
        n_used: fit.n_used,
        points,
    })
}

#[derive(Debug, Serialize)]
pub struct DecompositionDemo {
    pub years: Vec<i32>,
    pub aggregate: Vec<f64>,
    pub omega_mean: Vec<f64>,
    pub omega_cov: Vec<f64>,
    pub quality_mean: Vec<f64>,
    pub quality_cov: Vec<f64>,
}

/// Four-term decomposition of `z = omega + theta ln y` on a simulated panel
/// with the given per-year drifts, using true technology and qualities.
pub fn decomposition(n_firms: usize, years: usize, omega_drift: f64, x_drift: f64, seed: u64) -> Result<DecompositionDemo> {
    let mut cfg = SimConfig { n_firms: n_firms.clamp(10, 5000), years: years.clamp(3, 40), seed, ..SimConfig::default() };
    cfg.drift.omega = omega_drift;
    cfg.drift.x = x_drift;
    cfg.validate()?;
    let theta = cfg.params[0].theta;
    let firms = simulate_firm_panel(&cfg)?;
    let yrs: Vec<i32> = firms.iter().map(|r| r.year).collect();
    let omega: Vec<f64> = firms.iter().map(|r| r.omega).collect();
    let quality: Vec<f64> = firms.iter().map(|r| theta * r.y.ln()).collect();
    let output: Vec<f64> = firms.iter().map(|r| r.f).collect();
    let shares = shares_within_year(&yrs, &output)?;
    let rows = four_term(&yrs, &omega, &quality, &shares)?;
    Ok(DecompositionDemo {
        years: rows.iter().map(|r| r.year).collect(),
        aggregate: rows.iter().map(|r| r.aggregate).collect(),
        omega_mean: rows.iter().map(|r| r.omega_mean).collect(),
        omega_cov: rows.iter().map(|r| r.omega_cov).collect(),
        quality_mean: rows.iter().map(|r| r.quality_mean).collect(),
        quality_cov: rows.iter().map(|r| r.quality_cov).collect(),
    })
}

fn to_json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen]
pub fn equilibrium_curves(input_json: &str) -> String {
    match serde_json::from_str::<CurveInput>(input_json) {
        Ok(input) => to_json(curves(&input)),
        Err(e) => error_json(&e.to_string()),
    }
}

#[wasm_bindgen]
pub fn pareto_fit_demo(lambda: f64, n: usize, threshold: f64, contamination: f64, seed: u32) -> String {
    to_json(tail_demo(lambda, n, threshold, contamination, seed as u64))
}

#[wasm_bindgen]
pub fn decomposition_demo(n_firms: usize, years: usize, omega_drift: f64, x_drift: f64, seed: u32) -> String {
    to_json(decomposition(n_firms, years, omega_drift, x_drift, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_are_linear_in_x() {
        let c = curves(&CurveInput::default()).unwrap();
        let a = c.top[0] / c.x[0];
        for (t, x) in c.top.iter().zip(&c.x) {
            assert!((t / x - a).abs() < 1e-12);
        }
        assert!((a.ln() - c.b0).abs() < 1e-12);
    }

    #[test]
    fn pam_violation_is_reported() {
        let s = equilibrium_curves(r#"{"lambda_y": 1.48, "alpha_x": 0.5}"#);
        assert!(s.contains("\"error\""), "{s}");
        let s = equilibrium_curves("{not json");
        assert!(s.contains("\"error\""));
    }

    #[test]
    fn thresholding_recovers_the_tail() {
        let clean = tail_demo(1.8, 20_000, 0.3, 0.3, 1).unwrap();
        let raw = tail_demo(1.8, 20_000, f64::NEG_INFINITY, 0.3, 1).unwrap();
        assert!((clean.lambda_hat - 1.8).abs() < 0.1, "{}", clean.lambda_hat);
        assert!(clean.r_squared > raw.r_squared);
    }

    #[test]
    fn decomposition_closes_and_drifts() {
        let d = decomposition(300, 8, 0.02, -0.05, 3).unwrap();
        for i in 0..d.years.len() {
            let sum = d.omega_mean[i] + d.omega_cov[i] + d.quality_mean[i] + d.quality_cov[i];
            assert!((sum - d.aggregate[i]).abs() < 1e-12);
        }
        let last = d.years.len() - 1;
        assert!(d.omega_mean[last] > d.omega_mean[0]);
        assert!(d.quality_mean[last] < d.quality_mean[0]);
        let json = decomposition_demo(50, 4, 0.0, 0.0, 1);
        assert!(json.starts_with("{\"years\":["));
    }
}

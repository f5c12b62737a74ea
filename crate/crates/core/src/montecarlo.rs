//! Parameter-recovery Monte Carlo on simulated panels with known truth.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::linalg::median;
use crate::matcheff::{estimate_match_efficiency, gap_rows_from_truth};
use crate::model::compute_constants;
use crate::params::ProductionForm;
use crate::prodfn::{coefficient_names, estimate_sector, rows_from_truth, PfOptions};
use crate::rng::derive_seed;
use crate::synth::{simulate_firm_panel, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub truth: f64,
    pub median: f64,
    /// Median absolute deviation of the estimates around their median.
    pub mad: f64,
    pub median_abs_error: f64,
    pub reps: usize,
}

/// Estimates from one replicate, in the order of [`parameter_names`].
pub type Replicate = Vec<f64>;

pub fn parameter_names(form: ProductionForm) -> Vec<String> {
    let mut names: Vec<String> = coefficient_names(form).iter().map(|s| s.to_string()).collect();
    if form == ProductionForm::Ces {
        names.extend(["b0".to_string(), "rho_x".to_string()]);
    }
    names
}

/// Single-sector simulation settings of replicate `rep`.
pub fn replicate_config(cfg: &RunConfig, rep: usize) -> Result<SimConfig> {
    let params = cfg.sector_params()?.swap_remove(0);
    let sim = SimConfig {
        n_firms: cfg.montecarlo.n_firms,
        years: cfg.montecarlo.years,
        n_sectors: 1,
        seed: derive_seed(cfg.sim.seed, &[0x6d63, rep as u64]),
        params: vec![params],
        ..cfg.sim.clone()
    };
    sim.validate()?;
    Ok(sim)
}

pub fn truth(cfg: &RunConfig) -> Result<Replicate> {
    let p = cfg.sector_params()?.swap_remove(0);
    Ok(match p.form {
        ProductionForm::Ces => {
            vec![p.beta_0, p.theta, p.alpha_l, p.alpha_k, p.rho, compute_constants(&p)?.b0, p.rho_x]
        }
        ProductionForm::Cd => vec![p.beta_0, p.beta_x_cd, p.beta_y_cd, p.alpha_l, p.alpha_k, p.rho],
    })
}

/// Estimate on true qualities; the production form follows the parameters.
pub fn run_replicate(cfg: &RunConfig, rep: usize) -> Result<Replicate> {
    let sim = replicate_config(cfg, rep)?;
    let form = sim.params[0].form;
    let firms = simulate_firm_panel(&sim)?;
    let opts = PfOptions { form, seed: derive_seed(cfg.pf.seed, &[rep as u64]), ..cfg.pf.clone() };
    let (est, _) = estimate_sector(&rows_from_truth(&firms), &opts)?;
    let mut out = est.coef;
    if form == ProductionForm::Ces {
        let me = estimate_match_efficiency(&gap_rows_from_truth(&firms))?;
        out.extend([me.b0, me.rho_x]);
    }
    Ok(out)
}

pub fn run_replicates(cfg: &RunConfig) -> Result<Vec<Replicate>> {
    let reps = cfg.montecarlo.reps;
    if reps == 0 {
        return Err(Error::ConfigError("montecarlo needs at least one replicate".into()));
    }
    let one = |r: usize| run_replicate(cfg, r).map_err(|e| e.in_stage(&format!("replicate {r}")));
    #[cfg(feature = "parallel")]
    let out = (0..reps).into_par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let out = (0..reps).map(one).collect();
    out
}

pub fn summarize(names: &[String], truth: &[f64], reps: &[Replicate]) -> Vec<RecoveryRow> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let v: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            let med = median(&v);
            let dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
            let err: Vec<f64> = v.iter().map(|x| (x - truth[k]).abs()).collect();
            RecoveryRow {
                parameter: name.clone(),
                truth: truth[k],
                median: med,
                mad: median(&dev),
                median_abs_error: median(&err),
                reps: v.len(),
            }
        })
        .collect()
}

pub fn run_montecarlo(cfg: &RunConfig) -> Result<Vec<RecoveryRow>> {
    let form = cfg.sector_params()?[0].form;
    let reps = run_replicates(cfg)?;
    Ok(summarize(&parameter_names(form), &truth(cfg)?, &reps))
}

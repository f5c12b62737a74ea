//! The estimation pipeline, stage by stage.
//!
//! Every stage has an in-memory form and a file form. File stages read their
//! inputs from and write their tables to one directory, so running the stages
//! one at a time or all at once gives the same files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::aggdecomp::{
    self, cd_measured_productivity, dispersion_stats, four_term, growth_rates, long_series, measured_productivity,
    olley_pakes, shares_within_year, DispersionRow, FourTermRow, GrowthRow, LongRow, MeasuredRow, OpRow,
};
use crate::akm::{
    apply_sample_screens, estimate_akm, firm_quality, identify_top_workers, largest_connected_set,
    variance_decomposition, worker_quality, AkmEstimate, ComponentStats, FirmQuality, ScreenReport, VarianceRow,
    COMPONENTS, COVARIATE_NAMES,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, fmt_f64, Table};
use crate::matcheff::{self, gap_rows_from_quality, general_slope_check, GapRow, MatchEffEstimate, OmegaXRow, SlopeCheck};
use crate::paretofit::{rank_regression, rank_regression_by_year, TailFit};
use crate::params::ProductionForm;
use crate::prodfn::{self, coefficient_names, rows_from_quality, PfEstimate, TfpRow};
use crate::synth::{simulate_firm_panel, simulate_worker_panel, FirmYear, MatchRecord};

pub const FIRMS: &str = "firms.csv";
pub const MATCHES: &str = "matches.csv";
pub const SCREENED: &str = "screened_matches.csv";
pub const SCREEN_REPORT: &str = "screen_report.csv";
pub const AKM_MATCHES: &str = "akm_matches.csv";
pub const AKM_COEFFICIENTS: &str = "akm_coefficients.csv";
pub const AKM_WORKERS: &str = "akm_worker_effects.csv";
pub const AKM_FIRMS: &str = "akm_firm_effects.csv";
pub const AKM_VARIANCE: &str = "akm_variance.csv";
pub const FIRM_QUALITY: &str = "firm_quality.csv";
pub const PARETOFIT: &str = "paretofit.csv";
pub const PF_COEFFICIENTS: &str = "pf_coefficients.csv";
pub const TFP: &str = "tfp.csv";
pub const MATCH_EFFICIENCY: &str = "match_efficiency.csv";
pub const MATCHEFF_COEFFICIENTS: &str = "matcheff_coefficients.csv";
pub const SLOPE_CHECK: &str = "slope_check.csv";
pub const MEASURED: &str = "measured_productivity.csv";
pub const DECOMPOSITION: &str = "decomposition.csv";
pub const GROWTH: &str = "growth.csv";
pub const DISPERSION: &str = "dispersion.csv";
pub const SERIES_LONG: &str = "series_long.csv";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Screen,
    Akm,
    Quality,
    Paretofit,
    EstimatePf,
    Matcheff,
    Decompose,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Simulate,
        Stage::Screen,
        Stage::Akm,
        Stage::Quality,
        Stage::Paretofit,
        Stage::EstimatePf,
        Stage::Matcheff,
        Stage::Decompose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Screen => "screen",
            Stage::Akm => "akm",
            Stage::Quality => "quality",
            Stage::Paretofit => "paretofit",
            Stage::EstimatePf => "estimate-pf",
            Stage::Matcheff => "matcheff",
            Stage::Decompose => "decompose",
        }
    }
}

// ---- in-memory stages ----

pub fn simulate(cfg: &RunConfig) -> Result<(Vec<FirmYear>, Vec<MatchRecord>)> {
    let sim = cfg.sim_config()?;
    let firms = simulate_firm_panel(&sim)?;
    let matches = simulate_worker_panel(&firms, &sim)?.matches;
    Ok((firms, matches))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Screened {
    pub matches: Vec<MatchRecord>,
    pub report: ScreenReport,
    pub components: ComponentStats,
}

/// Sample screens, then the largest connected worker-firm set.
pub fn screen(cfg: &RunConfig, matches: &[MatchRecord]) -> Screened {
    let (kept, report) = apply_sample_screens(matches, &cfg.screen);
    let (matches, components) = largest_connected_set(&kept);
    Screened { matches, report, components }
}

#[derive(Debug, Clone)]
pub struct AkmOutput {
    pub estimate: AkmEstimate,
    /// Worker quality per match row.
    pub h: Vec<f64>,
    pub variance: Vec<VarianceRow>,
}

pub fn akm(cfg: &RunConfig, matches: &[MatchRecord]) -> Result<AkmOutput> {
    let estimate = estimate_akm(matches, &cfg.akm)?;
    let h = worker_quality(&estimate, matches)?;
    let variance = variance_decomposition(&estimate, matches)?;
    Ok(AkmOutput { estimate, h, variance })
}

pub fn quality(matches: &[MatchRecord], h: &[f64]) -> Result<(Vec<FirmQuality>, usize)> {
    firm_quality(matches, h, &identify_top_workers(matches))
}

/// Tail fit of top-worker (`y`) or mean non-top (`x`) qualities.
pub fn paretofit(cfg: &RunConfig, quality: &[FirmQuality]) -> Result<(String, TailFit)> {
    let pc = &cfg.pareto;
    let value = |q: &FirmQuality| match pc.series.as_str() {
        "x" => Ok(q.ln_x.exp()),
        "y" => Ok(q.ln_y.exp()),
        s => Err(Error::ConfigError(format!("pareto series must be x or y, got `{s}`"))),
    };
    if pc.year_dummies {
        let v = quality.iter().map(value).collect::<Result<Vec<_>>>()?;
        let years: Vec<i32> = quality.iter().map(|q| q.year).collect();
        return Ok(("pooled".into(), rank_regression_by_year(&v, &years, pc.threshold)?));
    }
    let year = match pc.year {
        Some(y) => y,
        None => quality.iter().map(|q| q.year).min().ok_or_else(|| Error::MissingInput("no firm qualities".into()))?,
    };
    let v = quality.iter().filter(|q| q.year == year).map(value).collect::<Result<Vec<_>>>()?;
    Ok((year.to_string(), rank_regression(&v, pc.threshold)?))
}

pub fn estimate_pf(
    cfg: &RunConfig,
    firms: &[FirmYear],
    quality: &[FirmQuality],
) -> Result<(Vec<PfEstimate>, Vec<TfpRow>)> {
    let (mut rows, _) = rows_from_quality(firms, quality)?;
    rows.retain(|r| cfg.wants_sector(r.sector));
    if rows.is_empty() {
        return Err(Error::MissingInput("no firm-years in the selected sectors".into()));
    }
    prodfn::estimate_all(&rows, &cfg.pf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchEffOutput {
    pub estimates: Vec<MatchEffEstimate>,
    pub omega_x: Vec<OmegaXRow>,
    pub slopes: Vec<SlopeCheck>,
}

fn gap_rows(cfg: &RunConfig, firms: &[FirmYear], quality: &[FirmQuality]) -> Result<Vec<GapRow>> {
    let mut rows = gap_rows_from_quality(firms, quality)?;
    rows.retain(|r| cfg.wants_sector(r.sector));
    Ok(rows)
}

pub fn matcheff(cfg: &RunConfig, firms: &[FirmYear], quality: &[FirmQuality]) -> Result<MatchEffOutput> {
    let rows = gap_rows(cfg, firms, quality)?;
    let (estimates, omega_x) = matcheff::estimate_all(&rows)?;
    let slopes = general_slope_check(&rows)?;
    Ok(MatchEffOutput { estimates, omega_x, slopes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub measured: Vec<MeasuredRow>,
    /// Value-added share of each measured row within its year.
    pub shares: Vec<f64>,
    pub olley_pakes: Vec<OpRow>,
    pub four_term: Vec<FourTermRow>,
    pub growth: Vec<GrowthRow>,
    pub dispersion: Vec<DispersionRow>,
    pub long: Vec<LongRow>,
}

impl Decomposition {
    /// Per-year aggregates of the named series: `z`, `omega`, `quality` and
    /// the four terms.
    pub fn series(&self) -> Vec<(&'static str, Vec<(i32, f64)>)> {
        let col = |f: fn(&FourTermRow) -> f64| self.four_term.iter().map(|r| (r.year, f(r))).collect::<Vec<_>>();
        vec![
            ("z", self.olley_pakes.iter().map(|r| (r.year, r.aggregate)).collect()),
            ("omega", col(FourTermRow::omega)),
            ("quality", col(FourTermRow::quality)),
            ("omega_mean", col(|r| r.omega_mean)),
            ("omega_cov", col(|r| r.omega_cov)),
            ("quality_mean", col(|r| r.quality_mean)),
            ("quality_cov", col(|r| r.quality_cov)),
        ]
    }
}

pub fn decompose(
    cfg: &RunConfig,
    firms: &[FirmYear],
    quality: &[FirmQuality],
    estimates: &[PfEstimate],
    tfp: &[TfpRow],
    omega_x: &[OmegaXRow],
) -> Result<Decomposition> {
    let gaps = gap_rows(cfg, firms, quality)?;
    let tfp: Vec<TfpRow> = tfp.iter().filter(|r| cfg.wants_sector(r.sector)).cloned().collect();
    let cd = estimates.iter().any(|e| e.form == ProductionForm::Cd);
    let measured = if cd {
        let betas = estimates
            .iter()
            .map(|e| Ok((e.sector, (coef(e, "beta_x")?, coef(e, "beta_y")?))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        cd_measured_productivity(&tfp, &gaps, &betas)?
            .into_iter()
            .map(|r| MeasuredRow {
                firm_id: r.firm_id,
                sector: r.sector,
                year: r.year,
                z: r.z,
                omega: r.eta,
                quality: r.x_part + r.y_part,
            })
            .collect()
    } else {
        let theta = estimates.iter().map(|e| Ok((e.sector, coef(e, "theta")?))).collect::<Result<BTreeMap<_, _>>>()?;
        measured_productivity(&tfp, &gaps, omega_x, &theta, cfg.decompose.variant)?
    };
    let output: BTreeMap<(u64, i32), f64> = firms.iter().map(|r| ((r.firm_id, r.year), r.f)).collect();
    let years: Vec<i32> = measured.iter().map(|r| r.year).collect();
    let weights = measured
        .iter()
        .map(|r| {
            output
                .get(&(r.firm_id, r.year))
                .copied()
                .ok_or_else(|| Error::KeyMismatch(format!("no output for firm {} in {}", r.firm_id, r.year)))
        })
        .collect::<Result<Vec<_>>>()?;
    let shares = shares_within_year(&years, &weights)?;
    let z: Vec<f64> = measured.iter().map(|r| r.z).collect();
    let omega: Vec<f64> = measured.iter().map(|r| r.omega).collect();
    let qual: Vec<f64> = measured.iter().map(|r| r.quality).collect();
    let op = olley_pakes(&years, &z, &shares)?;
    let ft = four_term(&years, &omega, &qual, &shares)?;
    let dispersion = dispersion_stats(&years, &omega, &qual)?;
    let mut out = Decomposition {
        measured,
        shares,
        olley_pakes: op,
        four_term: ft,
        growth: Vec::new(),
        dispersion,
        long: Vec::new(),
    };
    let windows: Vec<(i32, i32)> = if cfg.decompose.windows.is_empty() {
        let first = out.olley_pakes.first().map(|r| r.year).unwrap_or_default();
        let last = out.olley_pakes.last().map(|r| r.year).unwrap_or_default();
        vec![(first, last)]
    } else {
        cfg.decompose.windows.iter().map(|w| (w[0], w[1])).collect()
    };
    let series = out.series();
    let mut growth = Vec::new();
    for (name, s) in &series {
        growth.extend(growth_rates(name, s, &windows)?);
    }
    out.long = long_series(&series[..3], cfg.decompose.normalize);
    out.growth = growth;
    Ok(out)
}

fn coef(e: &PfEstimate, name: &str) -> Result<f64> {
    e.get(name).ok_or(Error::MissingCoefficients(e.sector))
}

/// Every in-memory output of a full run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub firms: Vec<FirmYear>,
    pub screened: Screened,
    pub akm: AkmOutput,
    pub quality: Vec<FirmQuality>,
    pub pf: Vec<PfEstimate>,
    pub tfp: Vec<TfpRow>,
    pub matcheff: MatchEffOutput,
    pub decomposition: Decomposition,
}

/// Simulate and estimate without touching the file system.
pub fn run_in_memory(cfg: &RunConfig) -> Result<PipelineRun> {
    let tag = |s: Stage| move |e: Error| e.in_stage(s.name());
    let (firms, matches) = simulate(cfg).map_err(tag(Stage::Simulate))?;
    let screened = screen(cfg, &matches);
    let akm = akm(cfg, &screened.matches).map_err(tag(Stage::Akm))?;
    let (quality, _) = quality(&screened.matches, &akm.h).map_err(tag(Stage::Quality))?;
    let (pf, tfp) = estimate_pf(cfg, &firms, &quality).map_err(tag(Stage::EstimatePf))?;
    let me = matcheff(cfg, &firms, &quality).map_err(tag(Stage::Matcheff))?;
    let decomposition = decompose(cfg, &firms, &quality, &pf, &tfp, &me.omega_x).map_err(tag(Stage::Decompose))?;
    Ok(PipelineRun { firms, screened, akm, quality, pf, tfp, matcheff: me, decomposition })
}

// ---- file stages ----

pub fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), cfg.manifest()?)?;
    Ok(())
}

/// Run one stage against the files in `dir`, then echo the configuration.
pub fn run_stage(stage: Stage, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let run = || -> Result<()> {
        match stage {
            Stage::Simulate => {
                let (firms, matches) = simulate(cfg)?;
                io::firms_table(&firms).write(&dir.join(FIRMS))?;
                io::matches_table(&matches).write(&dir.join(MATCHES))
            }
            Stage::Screen => {
                let s = screen(cfg, &io::read_matches(&dir.join(MATCHES))?);
                io::matches_table(&s.matches).write(&dir.join(SCREENED))?;
                screen_table(&s).write(&dir.join(SCREEN_REPORT))
            }
            Stage::Akm => {
                let matches = io::read_matches(&dir.join(SCREENED))?;
                let out = akm(cfg, &matches)?;
                write_akm(&out, &matches, dir)
            }
            Stage::Quality => {
                let path = dir.join(AKM_MATCHES);
                let matches = io::read_matches(&path)?;
                let h = io::read_column(&path, "h")?;
                let (q, _) = quality(&matches, &h)?;
                io::quality_table(&q).write(&dir.join(FIRM_QUALITY))
            }
            Stage::Paretofit => {
                let (sample, fit) = paretofit(cfg, &io::read_quality(&dir.join(FIRM_QUALITY))?)?;
                tail_table(&cfg.pareto.series, &sample, &fit).write(&dir.join(PARETOFIT))
            }
            Stage::EstimatePf => {
                let firms = io::read_firms(&dir.join(FIRMS))?;
                let q = io::read_quality(&dir.join(FIRM_QUALITY))?;
                let (est, tfp) = estimate_pf(cfg, &firms, &q)?;
                pf_table(&est).write(&dir.join(PF_COEFFICIENTS))?;
                tfp_table(&tfp).write(&dir.join(TFP))
            }
            Stage::Matcheff => {
                let firms = io::read_firms(&dir.join(FIRMS))?;
                let q = io::read_quality(&dir.join(FIRM_QUALITY))?;
                let out = matcheff(cfg, &firms, &q)?;
                omega_x_table(&out.omega_x).write(&dir.join(MATCH_EFFICIENCY))?;
                matcheff_table(&out.estimates).write(&dir.join(MATCHEFF_COEFFICIENTS))?;
                slope_table(&out.slopes).write(&dir.join(SLOPE_CHECK))
            }
            Stage::Decompose => {
                let firms = io::read_firms(&dir.join(FIRMS))?;
                let q = io::read_quality(&dir.join(FIRM_QUALITY))?;
                let est = read_pf_estimates(&dir.join(PF_COEFFICIENTS))?;
                let tfp = read_tfp(&dir.join(TFP))?;
                let ox = match cfg.decompose.variant {
                    aggdecomp::Variant::NontopBased => read_omega_x(&dir.join(MATCH_EFFICIENCY))?,
                    aggdecomp::Variant::TopBased => Vec::new(),
                };
                let d = decompose(cfg, &firms, &q, &est, &tfp, &ox)?;
                write_decomposition(&d, dir)
            }
        }
    };
    run().map_err(|e| e.in_stage(stage.name()))?;
    write_manifest(cfg, dir)
}

/// All stages in dependency order.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<()> {
    for stage in Stage::ALL {
        run_stage(stage, cfg, dir)?;
    }
    Ok(())
}

/// Tail fit of a plain value file.
pub fn paretofit_values(path: &Path, threshold: f64) -> Result<TailFit> {
    rank_regression(&io::read_values(path)?, threshold)
}

// ---- tables ----

fn kv_table(rows: &[(&str, String)]) -> Table {
    let mut t = Table::new(&["key", "value"]);
    for (k, v) in rows {
        t.push(vec![k.to_string(), v.clone()]);
    }
    t
}

fn screen_table(s: &Screened) -> Table {
    let r = &s.report;
    kv_table(&[
        ("n_in", r.n_in.to_string()),
        ("dropped_age", r.dropped_age.to_string()),
        ("dropped_floor", r.dropped_floor.to_string()),
        ("dropped_multiple", r.dropped_multiple.to_string()),
        ("dropped_owner", r.dropped_owner.to_string()),
        ("n_screened", r.n_out.to_string()),
        ("n_components", s.components.n_components.to_string()),
        ("n_connected", s.matches.len().to_string()),
        ("retained_share", fmt_f64(s.components.retained_share)),
    ])
}

fn write_akm(out: &AkmOutput, matches: &[MatchRecord], dir: &Path) -> Result<()> {
    let e = &out.estimate;
    let alpha: Vec<f64> = matches.iter().map(|m| e.worker_effect(m.worker_id).unwrap_or(f64::NAN)).collect();
    let psi: Vec<f64> = matches.iter().map(|m| e.firm_effect(m.firm_id).unwrap_or(f64::NAN)).collect();
    io::matches_with_columns(matches, &[("alpha", &alpha), ("psi", &psi), ("h", &out.h), ("residual", &e.residuals)])
        .write(&dir.join(AKM_MATCHES))?;

    let mut rows: Vec<(String, String)> = vec![("intercept".into(), fmt_f64(e.intercept))];
    for (n, b) in COVARIATE_NAMES.iter().zip(&e.beta) {
        rows.push((n.to_string(), fmt_f64(*b)));
    }
    for (i, y) in e.year_effects.iter().enumerate() {
        rows.push((format!("year_{}", e.first_year + i as i32 * e.year_bin), fmt_f64(*y)));
    }
    rows.extend([
        ("r2".into(), fmt_f64(e.r2)),
        ("adj_r2".into(), fmt_f64(e.adj_r2)),
        ("n_obs".into(), e.n_obs.to_string()),
        ("n_params".into(), e.n_params.to_string()),
        ("iterations".into(), e.iterations.to_string()),
        ("rel_residual".into(), fmt_f64(e.rel_residual)),
    ]);
    let rows: Vec<(&str, String)> = rows.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    kv_table(&rows).write(&dir.join(AKM_COEFFICIENTS))?;

    let mut t = Table::new(&["worker_id", "alpha"]);
    for (id, a) in e.worker_ids.iter().zip(&e.alpha) {
        t.push(vec![id.to_string(), fmt_f64(*a)]);
    }
    t.write(&dir.join(AKM_WORKERS))?;
    let mut t = Table::new(&["firm_id", "psi"]);
    for (id, p) in e.firm_ids.iter().zip(&e.psi) {
        t.push(vec![id.to_string(), fmt_f64(*p)]);
    }
    t.write(&dir.join(AKM_FIRMS))?;

    let mut header: Vec<String> = vec!["group".into(), "n".into(), "var_lnw".into()];
    header.extend(COMPONENTS.iter().map(|c| format!("var_{c}")));
    if let Some(first) = out.variance.first() {
        header.extend(first.cov.iter().map(|((i, j), _)| format!("cov_{}_{}", COMPONENTS[*i], COMPONENTS[*j])));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&header);
    for v in &out.variance {
        let mut row = vec![v.group.clone(), v.n.to_string(), fmt_f64(v.var_lnw)];
        row.extend(v.var.iter().map(|x| fmt_f64(*x)));
        row.extend(v.cov.iter().map(|c| fmt_f64(c.1)));
        t.push(row);
    }
    t.write(&dir.join(AKM_VARIANCE))
}

fn tail_table(series: &str, sample: &str, f: &TailFit) -> Table {
    let mut t = Table::new(&[
        "series", "sample", "threshold", "lambda_hat", "standard_error", "r_squared", "intercept", "n_used",
    ]);
    t.push(tail_row(series, sample, f));
    t
}

pub fn tail_row(series: &str, sample: &str, f: &TailFit) -> Vec<String> {
    vec![
        series.to_string(),
        sample.to_string(),
        fmt_f64(f.threshold),
        fmt_f64(f.lambda_hat),
        fmt_f64(f.standard_error),
        fmt_f64(f.r_squared),
        fmt_f64(f.intercept),
        f.n_used.to_string(),
    ]
}

const PF_FIXED: [&str; 8] =
    ["sector", "form", "n_obs", "n_pairs", "objective", "converged", "stage1_r2", "bootstrap_reps"];

pub fn pf_table(est: &[PfEstimate]) -> Table {
    let form = est.first().map(|e| e.form).unwrap_or_default();
    let mut header: Vec<String> = PF_FIXED.iter().map(|s| s.to_string()).collect();
    for n in coefficient_names(form) {
        header.push(n.to_string());
        header.push(format!("{n}_se"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&header);
    for e in est {
        let mut row = vec![
            e.sector.to_string(),
            form_name(e.form).to_string(),
            e.n_obs.to_string(),
            e.n_pairs.to_string(),
            fmt_f64(e.objective),
            e.converged.to_string(),
            fmt_f64(e.stage1_r2),
            e.bootstrap_reps.to_string(),
        ];
        for (i, c) in e.coef.iter().enumerate() {
            row.push(fmt_f64(*c));
            row.push(fmt_f64(e.se.get(i).copied().unwrap_or(f64::NAN)));
        }
        t.push(row);
    }
    t
}

fn form_name(f: ProductionForm) -> &'static str {
    match f {
        ProductionForm::Ces => "ces",
        ProductionForm::Cd => "cd",
    }
}

pub fn read_pf_estimates(path: &Path) -> Result<Vec<PfEstimate>> {
    let t = Table::read(path)?;
    let forms: Vec<String> = t.column("form")?;
    let sectors: Vec<u32> = t.column("sector")?;
    let n_obs: Vec<usize> = t.column("n_obs")?;
    let n_pairs: Vec<usize> = t.column("n_pairs")?;
    let objective: Vec<f64> = t.column("objective")?;
    let converged: Vec<bool> = t.column("converged")?;
    let r2: Vec<f64> = t.column("stage1_r2")?;
    let reps: Vec<usize> = t.column("bootstrap_reps")?;
    let mut out = Vec::with_capacity(sectors.len());
    for i in 0..sectors.len() {
        let form = match forms[i].as_str() {
            "ces" => ProductionForm::Ces,
            "cd" => ProductionForm::Cd,
            f => return Err(Error::Io(format!("unknown production form `{f}`"))),
        };
        let names = coefficient_names(form);
        let mut coef = Vec::new();
        let mut se = Vec::new();
        for n in names {
            coef.push(t.column::<f64>(n)?[i]);
            se.push(t.column::<f64>(&format!("{n}_se"))?[i]);
        }
        if reps[i] == 0 {
            se.clear();
        }
        out.push(PfEstimate {
            sector: sectors[i],
            form,
            names: names.iter().map(|s| s.to_string()).collect(),
            coef,
            se,
            n_obs: n_obs[i],
            n_pairs: n_pairs[i],
            objective: objective[i],
            converged: converged[i],
            stage1_r2: r2[i],
            bootstrap_reps: reps[i],
        });
    }
    Ok(out)
}

pub fn tfp_table(rows: &[TfpRow]) -> Table {
    let mut t = Table::new(&["firm_id", "sector", "year", "omega_hat", "phi", "eps_hat"]);
    for r in rows {
        t.push(vec![
            r.firm_id.to_string(),
            r.sector.to_string(),
            r.year.to_string(),
            fmt_f64(r.omega_hat),
            fmt_f64(r.phi),
            fmt_f64(r.eps_hat),
        ]);
    }
    t
}

pub fn read_tfp(path: &Path) -> Result<Vec<TfpRow>> {
    let t = Table::read(path)?;
    let (id, sector, year) = (t.column::<u64>("firm_id")?, t.column::<u32>("sector")?, t.column::<i32>("year")?);
    let (w, phi, eps) = (t.column::<f64>("omega_hat")?, t.column::<f64>("phi")?, t.column::<f64>("eps_hat")?);
    Ok((0..id.len())
        .map(|i| TfpRow { firm_id: id[i], sector: sector[i], year: year[i], omega_hat: w[i], phi: phi[i], eps_hat: eps[i] })
        .collect())
}

fn omega_x_table(rows: &[OmegaXRow]) -> Table {
    let mut t = Table::new(&["firm_id", "sector", "year", "omega_x"]);
    for r in rows {
        t.push(vec![r.firm_id.to_string(), r.sector.to_string(), r.year.to_string(), fmt_f64(r.omega_x)]);
    }
    t
}

pub fn read_omega_x(path: &Path) -> Result<Vec<OmegaXRow>> {
    let t = Table::read(path)?;
    let (id, sector, year) = (t.column::<u64>("firm_id")?, t.column::<u32>("sector")?, t.column::<i32>("year")?);
    let ox = t.column::<f64>("omega_x")?;
    Ok((0..id.len()).map(|i| OmegaXRow { firm_id: id[i], sector: sector[i], year: year[i], omega_x: ox[i] }).collect())
}

fn matcheff_table(est: &[MatchEffEstimate]) -> Table {
    let mut t = Table::new(&["sector", "b0", "rho_x", "intercept", "b1", "n_pairs", "degenerate", "nonstationary"]);
    for e in est {
        t.push(vec![
            e.sector.to_string(),
            fmt_f64(e.b0),
            fmt_f64(e.rho_x),
            fmt_f64(e.intercept),
            fmt_f64(e.b1),
            e.n_pairs.to_string(),
            e.degenerate.to_string(),
            e.nonstationary.to_string(),
        ]);
    }
    t
}

fn slope_table(rows: &[SlopeCheck]) -> Table {
    let mut t = Table::new(&["sector", "b1", "intercept", "se", "n"]);
    for s in rows {
        t.push(vec![
            s.sector.map_or_else(|| "all".to_string(), |v| v.to_string()),
            fmt_f64(s.b1),
            fmt_f64(s.intercept),
            fmt_f64(s.se),
            s.n.to_string(),
        ]);
    }
    t
}

fn write_decomposition(d: &Decomposition, dir: &Path) -> Result<()> {
    let mut t = Table::new(&["firm_id", "sector", "year", "z", "omega", "quality", "share"]);
    for (r, s) in d.measured.iter().zip(&d.shares) {
        t.push(vec![
            r.firm_id.to_string(),
            r.sector.to_string(),
            r.year.to_string(),
            fmt_f64(r.z),
            fmt_f64(r.omega),
            fmt_f64(r.quality),
            fmt_f64(*s),
        ]);
    }
    t.write(&dir.join(MEASURED))?;

    let mut t = Table::new(&[
        "year", "n", "aggregate", "mean", "cov", "omega_mean", "omega_cov", "quality_mean", "quality_cov",
    ]);
    for (op, ft) in d.olley_pakes.iter().zip(&d.four_term) {
        t.push(vec![
            op.year.to_string(),
            op.n.to_string(),
            fmt_f64(op.aggregate),
            fmt_f64(op.mean),
            fmt_f64(op.cov),
            fmt_f64(ft.omega_mean),
            fmt_f64(ft.omega_cov),
            fmt_f64(ft.quality_mean),
            fmt_f64(ft.quality_cov),
        ]);
    }
    t.write(&dir.join(DECOMPOSITION))?;

    let mut t = Table::new(&["series", "start", "end", "rate"]);
    for g in &d.growth {
        t.push(vec![g.series.clone(), g.start.to_string(), g.end.to_string(), fmt_f64(g.rate)]);
    }
    t.write(&dir.join(GROWTH))?;

    let mut t = Table::new(&[
        "year", "n", "var_z", "var_omega", "var_quality", "cov_omega_quality", "iqr_z", "iqr_omega", "iqr_quality",
        "p90_p10_z", "p90_p10_omega", "p90_p10_quality",
    ]);
    for r in &d.dispersion {
        let mut row = vec![
            r.year.to_string(),
            r.n.to_string(),
            fmt_f64(r.var_z),
            fmt_f64(r.var_omega),
            fmt_f64(r.var_quality),
            fmt_f64(r.cov_omega_quality),
        ];
        row.extend(r.iqr.iter().chain(&r.p90_p10).map(|v| fmt_f64(*v)));
        t.push(row);
    }
    t.write(&dir.join(DISPERSION))?;

    let mut t = Table::new(&["year", "series", "value"]);
    for r in &d.long {
        t.push(vec![r.year.to_string(), r.series.clone(), fmt_f64(r.value)]);
    }
    t.write(&dir.join(SERIES_LONG))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.sim.n_firms = 120;
        cfg.sim.years = 6;
        cfg.decompose.windows = vec![[2003, 2008], [2003, 2005], [2005, 2008]];
        cfg
    }

    #[test]
    fn file_stages_match_in_memory_run() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&cfg, dir.path()).unwrap();
        let mem = run_in_memory(&cfg).unwrap();
        let est = read_pf_estimates(&dir.path().join(PF_COEFFICIENTS)).unwrap();
        assert_eq!(est, mem.pf);
        assert_eq!(read_tfp(&dir.path().join(TFP)).unwrap(), mem.tfp);
        let z = io::read_column(&dir.path().join(MEASURED), "z").unwrap();
        assert_eq!(z, mem.decomposition.measured.iter().map(|r| r.z).collect::<Vec<_>>());
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(RunConfig::from_toml(&manifest).unwrap(), cfg);
    }

    #[test]
    fn missing_input_is_stage_tagged() {
        let dir = tempfile::tempdir().unwrap();
        match run_stage(Stage::Akm, &small(), dir.path()) {
            Err(Error::Stage { stage, source }) => {
                assert_eq!(stage, "akm");
                assert!(matches!(*source, Error::MissingInput(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sector_filter_restricts_estimates() {
        let mut cfg = small();
        cfg.sim.n_sectors = 2;
        cfg.sectors = vec![1];
        let run = run_in_memory(&cfg).unwrap();
        assert!(run.pf.iter().all(|e| e.sector == 1));
        assert!(run.decomposition.measured.iter().all(|r| r.sector == 1));
    }
}

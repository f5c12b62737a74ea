//! Synthetic firm panels and matched employer-employee records.
//!
//! Firms draw technology shocks, a non-top worker type and capital; the
//! top-worker type, labor count, intermediates and output follow from the
//! equilibrium. Workers then fill the labor counts year by year: one top
//! worker whose quality is exactly `ln y`, and a roster of non-top workers
//! that persists, ages, moves between similar firms and is topped up by
//! entrants whose qualities keep the roster mean at `ln x`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cd_constants, CdEquilibrium, Equilibrium};
use crate::params::{ModelParams, ProductionForm};
use crate::rng::substream;

const TAG_FIRM: u64 = 1;
const TAG_PRICE: u64 = 2;
const TAG_MOBILITY: u64 = 3;
const TAG_ROSTER: u64 = 4;

/// Oldest age kept in a roster; older workers retire.
pub const RETIREMENT_AGE: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Drift {
    /// Per-year drift of Hicks-neutral technology.
    pub omega: f64,
    /// Per-year drift of match efficiency.
    pub omega_x: f64,
    /// Per-year drift of log non-top worker types (a scale shift of the
    /// whole type distribution).
    pub x: f64,
}

impl Default for Drift {
    fn default() -> Self {
        Drift { omega: 0.0, omega_x: 0.0, x: 0.0 }
    }
}

/// Sector-level AR(1) processes of log output and intermediate prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceProcess {
    pub rho_g: f64,
    pub sd_g: f64,
    pub rho_m: f64,
    pub sd_m: f64,
}

impl Default for PriceProcess {
    fn default() -> Self {
        PriceProcess { rho_g: 0.5, sd_g: 0.05, rho_m: 0.5, sd_m: 0.05 }
    }
}

/// `ln m = c0 + c1 omega + c5 omega^3 + c2 ln l + c3 ln k + c4 ln(p_g/p_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntermediateDemand {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl Default for IntermediateDemand {
    fn default() -> Self {
        IntermediateDemand { c0: 0.0, c1: 1.0, c2: 0.8, c3: 0.2, c4: 0.5, c5: 0.0 }
    }
}

/// `ln k_t = mu + rho (ln k_{t-1} - mu) + kappa omega_{t-1} + sd nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapitalProcess {
    pub mu: f64,
    pub rho: f64,
    pub kappa: f64,
    pub sd: f64,
}

impl Default for CapitalProcess {
    fn default() -> Self {
        CapitalProcess { mu: 3.0, rho: 0.8, kappa: 0.5, sd: 0.2 }
    }
}

/// Earnings and roster dynamics of the worker panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerSetup {
    pub wage_intercept: f64,
    /// Coefficients on `a^2, a^3, male a^2, male a^3` with `a = (age-40)/40`.
    pub age_coefs: [f64; 4],
    /// Firm effect per unit of the firm's mean wage shifter.
    pub psi_scale: f64,
    /// Sd of log-earnings noise; ignored when `target_r2` is set.
    pub earnings_noise: f64,
    /// Population R^2 of log earnings on the systematic part.
    pub target_r2: Option<f64>,
    /// Sd of entrant quality around the firm's `ln x`.
    pub nontop_sd: f64,
    /// Share of each roster refilled by entrants every year (at least one).
    pub entry_rate: f64,
    /// Incumbents whose quality is further than this from the firm's `ln x`
    /// separate, keeping rosters assortative when types drift.
    pub retention_band: f64,
    pub owner_share: f64,
    /// Movers land within this many places of their origin in the ranking
    /// of firms by mean `ln x`.
    pub mobility_window: usize,
}

impl Default for WorkerSetup {
    fn default() -> Self {
        WorkerSetup {
            wage_intercept: 10.0,
            age_coefs: [-2.370, 1.36, -0.579, 0.589],
            psi_scale: 0.5,
            earnings_noise: 0.05,
            target_r2: None,
            nontop_sd: 0.1,
            entry_rate: 0.2,
            retention_band: 0.3,
            owner_share: 0.01,
            mobility_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_firms: usize,
    pub n_sectors: usize,
    pub years: usize,
    pub first_year: i32,
    pub seed: u64,
    pub mobility_rate: f64,
    /// Workers per unit of model labor demand.
    pub labor_scale: f64,
    /// Sd of the multiplicative noise on labor counts.
    pub labor_noise: f64,
    /// Upper quantile at which Pareto draws are truncated.
    pub upper_quantile: f64,
    /// Sd of each firm's first log-TFP draw; the stationary sd when unset.
    /// Lets panels with no TFP innovations still carry persistent dispersion.
    pub initial_omega_sd: Option<f64>,
    pub drift: Drift,
    pub prices: PriceProcess,
    pub demand: IntermediateDemand,
    pub capital: CapitalProcess,
    pub workers: WorkerSetup,
    /// Parameters of each sector; a single entry applies to all sectors.
    #[serde(skip)]
    pub params: Vec<ModelParams>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_firms: 500,
            n_sectors: 1,
            years: 13,
            first_year: 2003,
            seed: 42,
            mobility_rate: 0.3,
            labor_scale: 10.0,
            labor_noise: 0.2,
            upper_quantile: 1.0 - 1e-6,
            initial_omega_sd: None,
            drift: Drift::default(),
            prices: PriceProcess::default(),
            demand: IntermediateDemand::default(),
            capital: CapitalProcess::default(),
            workers: WorkerSetup::default(),
            params: vec![ModelParams::construction()],
        }
    }
}

impl SimConfig {
    pub fn sector_params(&self, sector: usize) -> &ModelParams {
        if self.params.len() == 1 {
            &self.params[0]
        } else {
            &self.params[sector]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.n_firms == 0 || self.n_sectors == 0 {
            return bad("n_firms and n_sectors must be positive".into());
        }
        if self.years < 3 {
            return bad(format!("years must be >= 3, got {}", self.years));
        }
        if !(self.mobility_rate > 0.0 && self.mobility_rate <= 1.0) {
            return bad(format!("mobility_rate must lie in (0,1], got {}", self.mobility_rate));
        }
        if self.demand.c1 <= 0.0 {
            return bad("intermediate demand needs c1 > 0".into());
        }
        if !(self.labor_scale > 0.0) || self.labor_noise < 0.0 {
            return bad("labor_scale must be > 0 and labor_noise >= 0".into());
        }
        if !(self.upper_quantile > 0.0 && self.upper_quantile <= 1.0) {
            return bad("upper_quantile must lie in (0,1]".into());
        }
        if self.initial_omega_sd.is_some_and(|v| !(v >= 0.0)) {
            return bad("initial_omega_sd must be >= 0".into());
        }
        if self.params.is_empty() || (self.params.len() != 1 && self.params.len() != self.n_sectors)
        {
            return bad(format!(
                "need 1 or {} parameter sets, got {}",
                self.n_sectors,
                self.params.len()
            ));
        }
        let w = &self.workers;
        if let Some(r) = w.target_r2 {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("target_r2 must lie in (0,1], got {r}"));
            }
        }
        if w.earnings_noise < 0.0 || w.nontop_sd < 0.0 {
            return bad("noise scales must be >= 0".into());
        }
        if w.retention_band.is_nan() || w.retention_band <= 0.0 {
            return bad(format!("retention_band must be positive, got {}", w.retention_band));
        }
        if !(0.0..=1.0).contains(&w.entry_rate) || !(0.0..=1.0).contains(&w.owner_share) {
            return bad("entry_rate and owner_share must lie in [0,1]".into());
        }
        if w.mobility_window == 0 {
            return bad("mobility_window must be >= 1".into());
        }
        for p in &self.params {
            p.validate()?;
        }
        Ok(())
    }
}

/// One firm-year of the synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmYear {
    pub firm_id: u64,
    pub sector: u32,
    pub year: i32,
    pub omega: f64,
    pub omega_x: f64,
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub k: f64,
    pub m: f64,
    pub p_g: f64,
    pub p_m: f64,
    pub f: f64,
    pub eps: f64,
    pub s: f64,
}

/// One worker-firm-year of the matched panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub worker_id: u64,
    pub firm_id: u64,
    pub year: i32,
    pub earnings: f64,
    pub age: u32,
    /// 1 for male, 0 for female.
    pub sex: u8,
    pub alpha_true: f64,
    pub is_top: bool,
    pub is_owner: bool,
}

/// Inverse-CDF Pareto draws `minimum * U^(-1/lambda)`, with `U` uniform on
/// `[1 - upper_quantile, 1)` so the upper tail is truncated at that quantile.
pub fn draw_pareto(
    lambda: f64,
    minimum: f64,
    n: usize,
    upper_quantile: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !(minimum > 0.0) {
        return Err(Error::InvalidParam(format!(
            "Pareto needs lambda > 0 and minimum > 0, got {lambda}, {minimum}"
        )));
    }
    if !(upper_quantile > 0.0 && upper_quantile <= 1.0) {
        return Err(Error::InvalidParam("upper_quantile must lie in (0,1]".into()));
    }
    let floor = 1.0 - upper_quantile;
    Ok((0..n)
        .map(|_| {
            let v: f64 = rng.random();
            let u = floor + (1.0 - floor) * (1.0 - v);
            minimum * u.powf(-1.0 / lambda)
        })
        .collect())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// AR(1) path of length `n` with a linear drift added. The start has the
/// stationary sd unless `init_sd` is given.
fn ar1_path(rho: f64, sd: f64, init_sd: Option<f64>, drift: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = init_sd.unwrap_or(sd / (1.0 - rho * rho).sqrt()) * normal(rng);
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t > 0 {
            v = rho * v + sd * normal(rng);
        }
        out.push(v + drift * t as f64);
    }
    out
}

struct SectorPrices {
    ln_pg: Vec<f64>,
    ln_pm: Vec<f64>,
}

fn sector_prices(cfg: &SimConfig, sector: usize) -> SectorPrices {
    let pp = &cfg.prices;
    let mut rng = substream(cfg.seed, &[TAG_PRICE, sector as u64]);
    SectorPrices {
        ln_pg: ar1_path(pp.rho_g, pp.sd_g, None, 0.0, cfg.years, &mut rng),
        ln_pm: ar1_path(pp.rho_m, pp.sd_m, None, 0.0, cfg.years, &mut rng),
    }
}

enum SectorModel {
    Ces(Equilibrium),
    Cd(ModelParams),
}

impl SectorModel {
    fn new(p: &ModelParams) -> Result<Self> {
        match p.form {
            ProductionForm::Ces => Ok(SectorModel::Ces(Equilibrium::new(p.clone())?)),
            ProductionForm::Cd => {
                cd_constants(p, 0.0)?;
                Ok(SectorModel::Cd(p.clone()))
            }
        }
    }

    /// Exponent of the firm-level distribution of non-top types: every firm
    /// has one top worker, so firm-level `y` is Pareto(`lambda_y`) and
    /// `x = T^-1(y)` inherits the exponent `lambda_y B`.
    fn firm_x_exponent(&self) -> Result<f64> {
        match self {
            SectorModel::Ces(eq) => Ok(eq.params.lambda_y),
            SectorModel::Cd(p) => Ok(p.lambda_y * cd_constants(p, 0.0)?.b),
        }
    }
}

fn simulate_firm(
    cfg: &SimConfig,
    sector: usize,
    index: usize,
    model: &SectorModel,
    prices: &SectorPrices,
) -> Result<Vec<FirmYear>> {
    let p = match model {
        SectorModel::Ces(eq) => &eq.params,
        SectorModel::Cd(p) => p,
    };
    let n = cfg.years;
    let mut rng = substream(cfg.seed, &[TAG_FIRM, sector as u64, index as u64]);
    let x_base = draw_pareto(model.firm_x_exponent()?, p.x_min, 1, cfg.upper_quantile, &mut rng)?[0];

    // one extra leading year feeds lagged omega into the first capital stock
    let omega_ext = ar1_path(p.rho, p.sigma_xi, cfg.initial_omega_sd, cfg.drift.omega, n + 1, &mut rng);
    // In CD mode this is a deviation of the top type from the optimal
    // match; without it the two quality elasticities are not separately
    // identified from technology.
    let omega_x = ar1_path(p.rho_x, p.sigma_u_x, None, cfg.drift.omega_x, n, &mut rng);
    let cap = &cfg.capital;
    let mut ln_k = cap.mu + cap.sd / (1.0 - cap.rho * cap.rho).sqrt() * normal(&mut rng);
    let d = &cfg.demand;
    let firm_id = (sector * cfg.n_firms + index) as u64;

    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let omega = omega_ext[t + 1];
        let ox = omega_x[t];
        ln_k = cap.mu + cap.rho * (ln_k - cap.mu) + cap.kappa * omega_ext[t] + cap.sd * normal(&mut rng);
        let x = x_base * (cfg.drift.x * t as f64).exp();
        let (y, l_model) = match model {
            SectorModel::Ces(eq) => (eq.constants.a_at(ox) * x, eq.labor_demand(x_base, ox)?),
            SectorModel::Cd(p) => {
                let cd = CdEquilibrium::new(p.clone(), omega)?;
                let y = cd.constants.a * x.powf(cd.constants.b) * ox.exp();
                (y, cd.labor_demand(x, y))
            }
        };
        let l = (cfg.labor_scale * l_model * (cfg.labor_noise * normal(&mut rng)).exp())
            .ceil()
            .max(2.0);
        let k = ln_k.exp();
        let (ln_pg, ln_pm) = (prices.ln_pg[t], prices.ln_pm[t]);
        let ln_m = d.c0
            + d.c1 * omega
            + d.c5 * omega.powi(3)
            + d.c2 * l.ln()
            + d.c3 * ln_k
            + d.c4 * (ln_pg - ln_pm);
        let eps = p.sigma_eps * normal(&mut rng);
        let quality = match p.form {
            ProductionForm::Ces => p.theta * y.ln(),
            ProductionForm::Cd => p.beta_x_cd * x.ln() + p.beta_y_cd * y.ln(),
        };
        let ln_f = p.beta_0 + quality + p.alpha_l * l.ln() + p.alpha_k * ln_k + omega + eps;
        rows.push(FirmYear {
            firm_id,
            sector: sector as u32,
            year: cfg.first_year + t as i32,
            omega,
            omega_x: ox,
            x,
            y,
            l,
            k,
            m: ln_m.exp(),
            p_g: ln_pg.exp(),
            p_m: ln_pm.exp(),
            f: ln_f.exp(),
            eps,
            s: 0.0,
        });
    }
    Ok(rows)
}

/// Simulate the firm panel, sorted by `(firm_id, year)`.
pub fn simulate_firm_panel(cfg: &SimConfig) -> Result<Vec<FirmYear>> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.n_sectors * cfg.n_firms * cfg.years);
    for sector in 0..cfg.n_sectors {
        let model = SectorModel::new(cfg.sector_params(sector))?;
        let prices = sector_prices(cfg, sector);
        for j in 0..cfg.n_firms {
            rows.extend(simulate_firm(cfg, sector, j, &model, &prices)?);
        }
    }
    let mut totals: BTreeMap<i32, f64> = BTreeMap::new();
    for r in &rows {
        *totals.entry(r.year).or_default() += r.p_g * r.f;
    }
    for r in &mut rows {
        r.s = r.p_g * r.f / totals[&r.year];
    }
    Ok(rows)
}

/// Age-sex covariates `a^2, a^3, male a^2, male a^3` with `a = (age-40)/40`.
pub fn age_covariates(age: u32, sex: u8) -> [f64; 4] {
    let a = (age as f64 - 40.0) / 40.0;
    let (a2, a3) = (a * a, a * a * a);
    let m = if sex == 1 { 1.0 } else { 0.0 };
    [a2, a3, m * a2, m * a3]
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Firm effect of the simulated earnings: `psi_scale` times the firm's
/// time-averaged wage shifter (`omega + (theta - lambda_y (1 - alpha_l)) omega_x`
/// for CES, the technology level for Cobb-Douglas).
pub fn firm_effects(firms: &[FirmYear], cfg: &SimConfig) -> BTreeMap<u64, f64> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for r in firms {
        let p = cfg.sector_params(r.sector as usize);
        let shifter = match p.form {
            ProductionForm::Ces => r.omega + (p.theta - p.lambda_y * (1.0 - p.alpha_l)) * r.omega_x,
            ProductionForm::Cd => r.omega,
        };
        let e = acc.entry(r.firm_id).or_default();
        e.0 += shifter;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (s, n))| (id, cfg.workers.psi_scale * s / n as f64))
        .collect()
}

#[derive(Debug, Clone)]
struct Worker {
    id: u64,
    birth_year: i32,
    sex: u8,
    alpha: f64,
    /// Year the worker joined the current firm.
    joined: i32,
}

impl Worker {
    fn age(&self, year: i32) -> u32 {
        (year - self.birth_year) as u32
    }
}

/// Matched records plus the truth used to generate them.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerPanel {
    pub matches: Vec<MatchRecord>,
    pub psi: BTreeMap<u64, f64>,
    pub beta: [f64; 4],
    pub noise_sd: f64,
}

struct PendingRecord {
    rec: MatchRecord,
    systematic: f64,
    z: f64,
}

/// Simulate the matched worker panel for a firm panel from
/// [`simulate_firm_panel`].
pub fn simulate_worker_panel(firms: &[FirmYear], cfg: &SimConfig) -> Result<WorkerPanel> {
    cfg.validate()?;
    let ws = &cfg.workers;
    let beta = ws.age_coefs;
    let psi = firm_effects(firms, cfg);

    // firm-year lookup and ranking by mean ln x
    let firm_ids: Vec<u64> = psi.keys().copied().collect();
    let pos: BTreeMap<u64, usize> = firm_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut by_year: BTreeMap<i32, Vec<Option<&FirmYear>>> = BTreeMap::new();
    let mut mean_lnx = vec![(0.0, 0usize); firm_ids.len()];
    for r in firms {
        let i = pos[&r.firm_id];
        by_year.entry(r.year).or_insert_with(|| vec![None; firm_ids.len()])[i] = Some(r);
        mean_lnx[i].0 += r.x.ln();
        mean_lnx[i].1 += 1;
    }
    let mut order: Vec<usize> = (0..firm_ids.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (mean_lnx[a].0 / mean_lnx[a].1 as f64, mean_lnx[b].0 / mean_lnx[b].1 as f64);
        ma.total_cmp(&mb).then(a.cmp(&b))
    });
    let mut rank = vec![0usize; firm_ids.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut next_id: u64 = 1;
    let mut rosters: Vec<Vec<Worker>> = vec![Vec::new(); firm_ids.len()];
    let mut pending: Vec<PendingRecord> = Vec::new();
    let first_year = *by_year.keys().next().ok_or_else(|| Error::ConfigError("empty firm panel".into()))?;

    for (&year, rows) in &by_year {
        let t = (year - first_year) as u64;
        if year > first_year {
            let mut rng = substream(cfg.seed, &[TAG_MOBILITY, t]);
            let mut movers: Vec<(usize, Worker)> = Vec::new();
            for (i, roster) in rosters.iter_mut().enumerate() {
                let mut kept = Vec::with_capacity(roster.len());
                for w in roster.drain(..) {
                    if w.age(year) > RETIREMENT_AGE {
                        continue;
                    }
                    if rng.random_bool(cfg.mobility_rate) {
                        movers.push((i, w));
                    } else {
                        kept.push(w);
                    }
                }
                *roster = kept;
            }
            let n = firm_ids.len();
            let win = ws.mobility_window.min(n.saturating_sub(1)).max(1) as i64;
            for (origin, w) in movers {
                let r0 = rank[origin] as i64;
                let dest = if n == 1 {
                    origin
                } else {
                    let mut off = rng.random_range(1..=win);
                    if rng.random_bool(0.5) {
                        off = -off;
                    }
                    let mut r1 = r0 + off;
                    if r1 < 0 || r1 >= n as i64 {
                        r1 = r0 - off;
                    }
                    order[r1.clamp(0, n as i64 - 1) as usize]
                };
                rosters[dest].push(Worker { joined: year, ..w });
            }
        }

        for (i, slot) in rows.iter().enumerate() {
            let Some(fy) = slot else {
                rosters[i].clear();
                continue;
            };
            let mut rng = substream(cfg.seed, &[TAG_ROSTER, fy.firm_id, t]);
            let cap = (fy.l as usize).saturating_sub(1).max(1);
            let n_ent = ((ws.entry_rate * cap as f64).round() as usize).clamp(1, cap);
            let roster = &mut rosters[i];
            let target = fy.x.ln();
            // arrivals stay for a year so movers keep linking firms
            roster.retain(|w| w.joined == year || (w.alpha + dot4(&age_covariates(w.age(year), w.sex), &beta) - target).abs() <= ws.retention_band);
            let keep = cap - n_ent;
            if roster.len() > keep {
                // random separations out of the sample
                for j in 0..keep {
                    let pick = rng.random_range(j..roster.len());
                    roster.swap(j, pick);
                }
                roster.truncate(keep);
            }
            let n_ent = cap - roster.len();
            let inc_h: f64 = roster
                .iter()
                .map(|w| w.alpha + dot4(&age_covariates(w.age(year), w.sex), &beta))
                .sum();
            let mut entrants: Vec<(u32, u8, f64)> = (0..n_ent)
                .map(|_| {
                    let age = rng.random_range(20..=45u32);
                    let sex = rng.random_bool(0.5) as u8;
                    (age, sex, ws.nontop_sd * normal(&mut rng))
                })
                .collect();
            let mean_dev = entrants.iter().map(|e| e.2).sum::<f64>() / n_ent as f64;
            let correction = (cap as f64 * target - inc_h - n_ent as f64 * target) / n_ent as f64;
            for e in &mut entrants {
                e.2 = target + e.2 - mean_dev + correction;
            }
            for (age, sex, h) in entrants {
                let alpha = h - dot4(&age_covariates(age, sex), &beta);
                roster.push(Worker { id: next_id, birth_year: year - age as i32, sex, alpha, joined: year });
                next_id += 1;
            }

            let psi_j = psi[&fy.firm_id];
            let top_age = rng.random_range(30..=60u32);
            let top_sex = rng.random_bool(0.5) as u8;
            let top_alpha = fy.y.ln() - dot4(&age_covariates(top_age, top_sex), &beta);
            let top = Worker { id: next_id, birth_year: year - top_age as i32, sex: top_sex, alpha: top_alpha, joined: year };
            next_id += 1;

            for (w, is_top) in std::iter::once((&top, true)).chain(roster.iter().map(|w| (w, false))) {
                let age = w.age(year);
                let systematic =
                    ws.wage_intercept + w.alpha + dot4(&age_covariates(age, w.sex), &beta) + psi_j;
                let is_owner = !is_top && rng.random_bool(ws.owner_share);
                pending.push(PendingRecord {
                    rec: MatchRecord {
                        worker_id: w.id,
                        firm_id: fy.firm_id,
                        year,
                        earnings: 0.0,
                        age,
                        sex: w.sex,
                        alpha_true: w.alpha,
                        is_top,
                        is_owner,
                    },
                    systematic,
                    z: normal(&mut rng),
                });
            }
        }
    }

    let noise_sd = match ws.target_r2 {
        Some(r) => {
            let n = pending.len() as f64;
            let mean = pending.iter().map(|p| p.systematic).sum::<f64>() / n;
            let var = pending.iter().map(|p| (p.systematic - mean).powi(2)).sum::<f64>() / n;
            (var * (1.0 - r) / r).sqrt()
        }
        None => ws.earnings_noise,
    };
    let matches = pending
        .into_iter()
        .map(|p| {
            let mut rec = p.rec;
            rec.earnings = (p.systematic + noise_sd * p.z).exp();
            rec
        })
        .collect();
    Ok(WorkerPanel { matches, psi, beta, noise_sd })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig { n_firms: 60, years: 6, ..SimConfig::default() }
    }

    #[test]
    fn pareto_degenerate_and_deterministic() {
        let mut r = substream(1, &[]);
        let v = draw_pareto(1e12, 2.0, 100, 1.0 - 1e-6, &mut r).unwrap();
        assert!(v.iter().all(|&x| (x - 2.0).abs() < 1e-9));
        let a = draw_pareto(1.8, 1.0, 50, 1.0, &mut substream(3, &[1])).unwrap();
        let b = draw_pareto(1.8, 1.0, 50, 1.0, &mut substream(3, &[1])).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| x >= 1.0));
        let t = draw_pareto(1.8, 1.0, 10_000, 0.99, &mut substream(3, &[2])).unwrap();
        let cap = 0.01f64.powf(-1.0 / 1.8);
        assert!(t.iter().all(|&x| x <= cap * (1.0 + 1e-12)));
        assert!(draw_pareto(0.0, 1.0, 1, 1.0, &mut r).is_err());
    }

    #[test]
    fn shares_sum_to_one_and_gap_is_exact() {
        let cfg = small();
        let firms = simulate_firm_panel(&cfg).unwrap();
        let eq = Equilibrium::new(cfg.params[0].clone()).unwrap();
        let mut tot: BTreeMap<i32, f64> = BTreeMap::new();
        for r in &firms {
            *tot.entry(r.year).or_default() += r.s;
            let gap = r.y.ln() - r.x.ln() - eq.constants.b0 - r.omega_x;
            assert!(gap.abs() < 1e-12);
            assert!(r.l >= 2.0 && r.l.fract() == 0.0);
        }
        assert!(tot.values().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn production_equation_holds_at_generation() {
        let cfg = small();
        let p = &cfg.params[0];
        for r in simulate_firm_panel(&cfg).unwrap() {
            let rhs = p.beta_0 + p.theta * r.y.ln() + p.alpha_l * r.l.ln() + p.alpha_k * r.k.ln()
                + r.omega
                + r.eps;
            assert!((r.f.ln() - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn shocks_off_gives_common_matching() {
        let p = ModelParams {
            sigma_xi: 0.0,
            sigma_u_x: 0.0,
            rho: 0.0,
            rho_x: 0.0,
            ..ModelParams::construction()
        };
        let cfg = SimConfig { params: vec![p.clone()], ..small() };
        let a = Equilibrium::new(p).unwrap().constants.a;
        for r in simulate_firm_panel(&cfg).unwrap() {
            assert_eq!(r.omega, 0.0);
            assert_eq!(r.omega_x, 0.0);
            assert!((r.y / r.x - a).abs() < 1e-12);
        }
    }

    #[test]
    fn adding_firms_keeps_existing_draws() {
        let a = simulate_firm_panel(&small()).unwrap();
        let b = simulate_firm_panel(&SimConfig { n_firms: 80, ..small() }).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!((ra.firm_id, ra.omega, ra.x, ra.k), (rb.firm_id, rb.omega, rb.x, rb.k));
        }
    }

    #[test]
    fn cd_panel_follows_cd_matching() {
        let p = ModelParams::construction_cd();
        let cfg = SimConfig { params: vec![p.clone()], ..small() };
        let exact = SimConfig { params: vec![ModelParams { sigma_u_x: 0.0, ..p.clone() }], ..small() };
        assert!(simulate_firm_panel(&exact).unwrap().iter().all(|r| r.omega_x == 0.0));
        for r in simulate_firm_panel(&cfg).unwrap() {
            let c = cd_constants(&p, r.omega).unwrap();
            assert!((r.y / (c.a * r.x.powf(c.b) * r.omega_x.exp()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn roster_means_and_single_top() {
        let cfg = small();
        let firms = simulate_firm_panel(&cfg).unwrap();
        let panel = simulate_worker_panel(&firms, &cfg).unwrap();
        let mut h: BTreeMap<(u64, i32), (f64, usize, usize)> = BTreeMap::new();
        for m in &panel.matches {
            let q = m.alpha_true + dot4(&age_covariates(m.age, m.sex), &panel.beta);
            let e = h.entry((m.firm_id, m.year)).or_default();
            if m.is_top {
                e.2 += 1;
            } else {
                e.0 += q;
                e.1 += 1;
            }
            assert!((20..=RETIREMENT_AGE).contains(&m.age));
        }
        for r in &firms {
            let (sum, n, tops) = h[&(r.firm_id, r.year)];
            assert_eq!(tops, 1);
            assert_eq!(n + 1, r.l as usize);
            assert!((sum / n as f64 - r.x.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn top_quality_equals_ln_y() {
        let cfg = small();
        let firms = simulate_firm_panel(&cfg).unwrap();
        let panel = simulate_worker_panel(&firms, &cfg).unwrap();
        let y: BTreeMap<(u64, i32), f64> = firms.iter().map(|r| ((r.firm_id, r.year), r.y)).collect();
        for m in panel.matches.iter().filter(|m| m.is_top) {
            let q = m.alpha_true + dot4(&age_covariates(m.age, m.sex), &panel.beta);
            assert!((q - y[&(m.firm_id, m.year)].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn age_profile_flat_at_forty() {
        for sex in [0, 1] {
            assert_eq!(age_covariates(40, sex), [0.0; 4]);
        }
        let b = WorkerSetup::default().age_coefs;
        let prof = |age: u32| dot4(&age_covariates(age, 1), &b);
        assert!(prof(39) < 0.0 && prof(41) < 0.0);
        assert!(prof(60) < prof(50));
    }

    #[test]
    fn target_r2_sets_noise() {
        let mut cfg = small();
        cfg.workers.target_r2 = Some(0.75);
        let firms = simulate_firm_panel(&cfg).unwrap();
        let panel = simulate_worker_panel(&firms, &cfg).unwrap();
        assert!(panel.noise_sd > 0.0);
        let lw: Vec<f64> = panel.matches.iter().map(|m| m.earnings.ln()).collect();
        let n = lw.len() as f64;
        let mean = lw.iter().sum::<f64>() / n;
        let var = lw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let r2 = 1.0 - panel.noise_sd.powi(2) / var;
        assert!((r2 - 0.75).abs() < 0.03, "{r2}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SimConfig { years: 2, ..small() };
        assert!(matches!(simulate_firm_panel(&cfg), Err(Error::ConfigError(_))));
        let mut cfg = small();
        cfg.demand.c1 = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { mobility_rate: 0.0, ..small() };
        assert!(cfg.validate().is_err());
    }
}

//! Two-way fixed-effects earnings decomposition and firm-level worker quality.
//!
//! `ln w = alpha_i + psi_j + X b + year-bin effects + e` on the largest
//! connected worker-firm set, solved by preconditioned CGLS. Worker quality
//! `h = alpha_i + X b` then splits each firm-year into its top worker(s) and
//! the rest.

use std::collections::{BTreeMap, HashMap};

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{age_covariates, MatchRecord};

pub const N_COVARIATES: usize = 4;
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = ["age2", "age3", "male_age2", "male_age3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub min_age: u32,
    pub max_age: u32,
    /// Annual earnings floor (minimum wage x 40 hours x 13 weeks by default).
    pub earnings_floor: f64,
    /// A worker's second match in a year survives only at this share of the first.
    pub second_match_ratio: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            min_age: 20,
            max_age: 64,
            earnings_floor: 10.0 * 40.0 * 13.0,
            second_match_ratio: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub n_in: usize,
    pub dropped_age: usize,
    pub dropped_floor: usize,
    pub dropped_multiple: usize,
    pub dropped_owner: usize,
    pub n_out: usize,
}

/// Sample screens in order: age, earnings floor, top-two matches per
/// worker-year with the two-thirds rule, owners.
pub fn apply_sample_screens(matches: &[MatchRecord], cfg: &ScreenConfig) -> (Vec<MatchRecord>, ScreenReport) {
    let mut rep = ScreenReport { n_in: matches.len(), ..Default::default() };
    let mut kept: Vec<&MatchRecord> = Vec::with_capacity(matches.len());
    for m in matches {
        if m.age < cfg.min_age || m.age > cfg.max_age {
            rep.dropped_age += 1;
        } else if !(m.earnings >= cfg.earnings_floor) {
            rep.dropped_floor += 1;
        } else {
            kept.push(m);
        }
    }

    let mut groups: BTreeMap<(u64, i32), Vec<usize>> = BTreeMap::new();
    for (i, m) in kept.iter().enumerate() {
        groups.entry((m.worker_id, m.year)).or_default().push(i);
    }
    let mut drop = vec![false; kept.len()];
    for idx in groups.values_mut() {
        if idx.len() < 2 {
            continue;
        }
        idx.sort_by(|&a, &b| {
            kept[b].earnings.total_cmp(&kept[a].earnings).then(kept[a].firm_id.cmp(&kept[b].firm_id))
        });
        for &i in &idx[2..] {
            drop[i] = true;
        }
        if kept[idx[1]].earnings < cfg.second_match_ratio * kept[idx[0]].earnings {
            drop[idx[1]] = true;
        }
    }

    let mut out = Vec::with_capacity(kept.len());
    for (i, m) in kept.into_iter().enumerate() {
        if drop[i] {
            rep.dropped_multiple += 1;
        } else if m.is_owner {
            rep.dropped_owner += 1;
        } else {
            out.push(m.clone());
        }
    }
    rep.n_out = out.len();
    (out, rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub n_components: usize,
    /// Match counts per component, largest first.
    pub sizes: Vec<usize>,
    pub retained_share: f64,
}

struct Graph {
    uf: UnionFind<usize>,
    firm_node: HashMap<u64, usize>,
}

fn build_graph(matches: &[MatchRecord]) -> Graph {
    let mut worker_node = HashMap::new();
    let mut firm_node = HashMap::new();
    let mut next = 0usize;
    for m in matches {
        worker_node.entry(m.worker_id).or_insert_with(|| {
            next += 1;
            next - 1
        });
        firm_node.entry(m.firm_id).or_insert_with(|| {
            next += 1;
            next - 1
        });
    }
    let mut uf = UnionFind::new(next);
    for m in matches {
        uf.union(worker_node[&m.worker_id], firm_node[&m.firm_id]);
    }
    Graph { uf, firm_node }
}

/// Matches in the largest connected component of the worker-firm graph,
/// counted by matches; ties go to the component holding the smallest firm id.
pub fn largest_connected_set(matches: &[MatchRecord]) -> (Vec<MatchRecord>, ComponentStats) {
    if matches.is_empty() {
        return (Vec::new(), ComponentStats { n_components: 0, sizes: Vec::new(), retained_share: 0.0 });
    }
    let g = build_graph(matches);
    // component root -> (match count, smallest firm id)
    let mut comp: HashMap<usize, (usize, u64)> = HashMap::new();
    for m in matches {
        let root = g.uf.find(g.firm_node[&m.firm_id]);
        let e = comp.entry(root).or_insert((0, u64::MAX));
        e.0 += 1;
        e.1 = e.1.min(m.firm_id);
    }
    let (&best, _) = comp
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("nonempty");
    let out: Vec<MatchRecord> = matches
        .iter()
        .filter(|m| g.uf.find(g.firm_node[&m.firm_id]) == best)
        .cloned()
        .collect();
    let mut sizes: Vec<usize> = comp.values().map(|c| c.0).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let stats = ComponentStats {
        n_components: comp.len(),
        sizes,
        retained_share: out.len() as f64 / matches.len() as f64,
    };
    (out, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AkmSpec {
    /// Width of the year-dummy bins in years.
    pub year_bin: i32,
    pub max_iter: usize,
    /// Relative normal-equation residual at which the solver stops.
    pub tol: f64,
}

impl Default for AkmSpec {
    fn default() -> Self {
        AkmSpec { year_bin: 2, max_iter: 50_000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AkmEstimate {
    pub worker_ids: Vec<u64>,
    /// Worker effects, mean zero across workers.
    pub alpha: Vec<f64>,
    pub firm_ids: Vec<u64>,
    /// Firm effects; the smallest firm id is pinned to zero.
    pub psi: Vec<f64>,
    pub beta: [f64; N_COVARIATES],
    pub first_year: i32,
    pub year_bin: i32,
    /// Effect of each year bin, the first bin being the reference.
    pub year_effects: Vec<f64>,
    pub intercept: f64,
    /// Residual per input row, in input order.
    pub residuals: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub iterations: usize,
    pub rel_residual: f64,
    worker_index: HashMap<u64, usize>,
    firm_index: HashMap<u64, usize>,
}

impl AkmEstimate {
    pub fn worker_effect(&self, id: u64) -> Option<f64> {
        self.worker_index.get(&id).map(|&i| self.alpha[i])
    }

    pub fn firm_effect(&self, id: u64) -> Option<f64> {
        self.firm_index.get(&id).map(|&i| self.psi[i])
    }

    pub fn year_effect(&self, year: i32) -> f64 {
        let b = ((year - self.first_year) / self.year_bin) as usize;
        self.year_effects.get(b).copied().unwrap_or(0.0)
    }

    pub fn xb(&self, m: &MatchRecord) -> f64 {
        dot(&age_covariates(m.age, m.sex), &self.beta)
    }
}

fn dot(a: &[f64; N_COVARIATES], b: &[f64; N_COVARIATES]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Sparse design: worker dummy, firm dummy (reference firm dropped),
/// covariates, year-bin dummy (first bin dropped).
struct Design {
    worker: Vec<usize>,
    firm: Vec<Option<usize>>,
    cov: Vec<[f64; N_COVARIATES]>,
    bin: Vec<Option<usize>>,
    n_w: usize,
    n_f: usize,
    n_b: usize,
}

impl Design {
    fn n_cols(&self) -> usize {
        self.n_w + self.n_f + N_COVARIATES + self.n_b
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (of, oc, ob) = (self.n_w, self.n_w + self.n_f, self.n_w + self.n_f + N_COVARIATES);
        for (i, o) in out.iter_mut().enumerate() {
            let mut v = x[self.worker[i]];
            if let Some(f) = self.firm[i] {
                v += x[of + f];
            }
            let c = &self.cov[i];
            for k in 0..N_COVARIATES {
                v += c[k] * x[oc + k];
            }
            if let Some(b) = self.bin[i] {
                v += x[ob + b];
            }
            *o = v;
        }
    }

    fn apply_t(&self, r: &[f64], out: &mut [f64]) {
        let (of, oc, ob) = (self.n_w, self.n_w + self.n_f, self.n_w + self.n_f + N_COVARIATES);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &ri) in r.iter().enumerate() {
            out[self.worker[i]] += ri;
            if let Some(f) = self.firm[i] {
                out[of + f] += ri;
            }
            let c = &self.cov[i];
            for k in 0..N_COVARIATES {
                out[oc + k] += c[k] * ri;
            }
            if let Some(b) = self.bin[i] {
                out[ob + b] += ri;
            }
        }
    }

    fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.n_cols()];
        let (of, oc, ob) = (self.n_w, self.n_w + self.n_f, self.n_w + self.n_f + N_COVARIATES);
        for i in 0..self.worker.len() {
            sq[self.worker[i]] += 1.0;
            if let Some(f) = self.firm[i] {
                sq[of + f] += 1.0;
            }
            for k in 0..N_COVARIATES {
                sq[oc + k] += self.cov[i][k] * self.cov[i][k];
            }
            if let Some(b) = self.bin[i] {
                sq[ob + b] += 1.0;
            }
        }
        sq.into_iter().map(|s| if s > 0.0 { s.sqrt() } else { 1.0 }).collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// CGLS on the column-scaled design. Returns solution, iterations and the
/// final relative normal-equation residual.
fn cgls(d: &Design, b: &[f64], max_iter: usize, tol: f64) -> Result<(Vec<f64>, usize, f64)> {
    let n = d.n_cols();
    let scale = d.column_norms();
    let mut z = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = vec![0.0; n];
    d.apply_t(&r, &mut s);
    s.iter_mut().zip(&scale).for_each(|(v, c)| *v /= c);
    let s0 = norm2(&s).sqrt();
    if s0 == 0.0 {
        return Ok((z, 0, 0.0));
    }
    let mut p = s.clone();
    let mut gamma = norm2(&s);
    let mut q = vec![0.0; b.len()];
    let mut tmp = vec![0.0; n];
    let mut rel = 1.0;
    for it in 1..=max_iter {
        tmp.iter_mut().zip(&p).zip(&scale).for_each(|((t, v), c)| *t = v / c);
        d.apply(&tmp, &mut q);
        let qq = norm2(&q);
        if qq == 0.0 {
            return Ok((unscale(z, &scale), it, rel));
        }
        let step = gamma / qq;
        z.iter_mut().zip(&p).for_each(|(a, v)| *a += step * v);
        r.iter_mut().zip(&q).for_each(|(a, v)| *a -= step * v);
        d.apply_t(&r, &mut s);
        s.iter_mut().zip(&scale).for_each(|(v, c)| *v /= c);
        let g_new = norm2(&s);
        rel = g_new.sqrt() / s0;
        if rel < tol {
            return Ok((unscale(z, &scale), it, rel));
        }
        let beta = g_new / gamma;
        gamma = g_new;
        p.iter_mut().zip(&s).for_each(|(a, v)| *a = v + beta * *a);
    }
    Err(Error::SolverNoConvergence { iterations: max_iter, residual: rel })
}

fn unscale(z: Vec<f64>, scale: &[f64]) -> Vec<f64> {
    z.into_iter().zip(scale).map(|(v, c)| v / c).collect()
}

/// Least-squares AKM fit on a connected match set.
pub fn estimate_akm(matches: &[MatchRecord], spec: &AkmSpec) -> Result<AkmEstimate> {
    if matches.is_empty() {
        return Err(Error::TooFewObservations { got: 0, need: 1 });
    }
    if spec.year_bin < 1 {
        return Err(Error::ConfigError("year_bin must be >= 1".into()));
    }
    let g = build_graph(matches);
    let mut roots: Vec<usize> = g.firm_node.values().map(|&n| g.uf.find(n)).collect();
    roots.sort_unstable();
    roots.dedup();
    if roots.len() > 1 {
        return Err(Error::NotConnected { components: roots.len() });
    }

    let mut worker_ids: Vec<u64> = matches.iter().map(|m| m.worker_id).collect();
    worker_ids.sort_unstable();
    worker_ids.dedup();
    let mut firm_ids: Vec<u64> = matches.iter().map(|m| m.firm_id).collect();
    firm_ids.sort_unstable();
    firm_ids.dedup();
    let worker_index: HashMap<u64, usize> = worker_ids.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    let firm_index: HashMap<u64, usize> = firm_ids.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let first_year = matches.iter().map(|m| m.year).min().expect("nonempty");
    let last_year = matches.iter().map(|m| m.year).max().expect("nonempty");
    let n_bins = ((last_year - first_year) / spec.year_bin + 1) as usize;

    let design = Design {
        worker: matches.iter().map(|m| worker_index[&m.worker_id]).collect(),
        firm: matches
            .iter()
            .map(|m| firm_index[&m.firm_id].checked_sub(1))
            .collect(),
        cov: matches.iter().map(|m| age_covariates(m.age, m.sex)).collect(),
        bin: matches
            .iter()
            .map(|m| (((m.year - first_year) / spec.year_bin) as usize).checked_sub(1))
            .collect(),
        n_w: worker_ids.len(),
        n_f: firm_ids.len() - 1,
        n_b: n_bins - 1,
    };

    let lw: Vec<f64> = matches.iter().map(|m| m.earnings.ln()).collect();
    let n = lw.len();
    let mean = lw.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = lw.iter().map(|v| v - mean).collect();
    let (sol, iterations, rel_residual) = cgls(&design, &centred, spec.max_iter, spec.tol)?;

    let mut fitted = vec![0.0; n];
    design.apply(&sol, &mut fitted);
    let residuals: Vec<f64> = centred.iter().zip(&fitted).map(|(y, f)| y - f).collect();

    let (n_w, n_f) = (design.n_w, design.n_f);
    let mut alpha: Vec<f64> = sol[..n_w].iter().map(|a| a + mean).collect();
    let intercept = alpha.iter().sum::<f64>() / n_w as f64;
    alpha.iter_mut().for_each(|a| *a -= intercept);
    let mut psi = vec![0.0];
    psi.extend_from_slice(&sol[n_w..n_w + n_f]);
    let mut beta = [0.0; N_COVARIATES];
    beta.copy_from_slice(&sol[n_w + n_f..n_w + n_f + N_COVARIATES]);
    let mut year_effects = vec![0.0];
    year_effects.extend_from_slice(&sol[n_w + n_f + N_COVARIATES..]);

    let rss = norm2(&residuals);
    let tss = norm2(&centred);
    let n_params = design.n_cols();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj_r2 = if n > n_params && tss > 0.0 {
        1.0 - (rss / (n - n_params) as f64) / (tss / (n - 1) as f64)
    } else {
        f64::NAN
    };

    Ok(AkmEstimate {
        worker_ids,
        alpha,
        firm_ids,
        psi,
        beta,
        first_year,
        year_bin: spec.year_bin,
        year_effects,
        intercept,
        residuals,
        r2,
        adj_r2,
        n_obs: n,
        n_params,
        iterations,
        rel_residual,
        worker_index,
        firm_index,
    })
}

/// Worker quality `h = alpha_i + X b` per match, in input order.
pub fn worker_quality(est: &AkmEstimate, matches: &[MatchRecord]) -> Result<Vec<f64>> {
    matches
        .iter()
        .map(|m| {
            est.worker_effect(m.worker_id)
                .map(|a| a + est.xb(m))
                .ok_or(Error::UnknownWorker(m.worker_id))
        })
        .collect()
}

/// Share of the top earnings a second worker must exceed to count as a tied top.
pub const TOP_TIE_SHARE: f64 = 0.995;

/// Top-worker flags per match: the highest earner in each firm-year, plus
/// the runner-up when it earns more than 99.5% of the top. Ties in earnings
/// go to the smaller worker id.
pub fn identify_top_workers(matches: &[MatchRecord]) -> Vec<bool> {
    let mut groups: BTreeMap<(u64, i32), Vec<usize>> = BTreeMap::new();
    for (i, m) in matches.iter().enumerate() {
        groups.entry((m.firm_id, m.year)).or_default().push(i);
    }
    let mut flags = vec![false; matches.len()];
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| {
            matches[b]
                .earnings
                .total_cmp(&matches[a].earnings)
                .then(matches[a].worker_id.cmp(&matches[b].worker_id))
        });
        flags[idx[0]] = true;
        if idx.len() > 1 && matches[idx[1]].earnings > TOP_TIE_SHARE * matches[idx[0]].earnings {
            flags[idx[1]] = true;
        }
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmQuality {
    pub firm_id: u64,
    pub year: i32,
    pub ln_y: f64,
    pub ln_x: f64,
    pub n_top: usize,
    pub n_nontop: usize,
}

/// Firm-year qualities. Returns the table (sorted by firm, year) and the
/// number of firm-years dropped for lacking a non-top worker.
pub fn firm_quality(matches: &[MatchRecord], h: &[f64], flags: &[bool]) -> Result<(Vec<FirmQuality>, usize)> {
    if h.len() != matches.len() || flags.len() != matches.len() {
        return Err(Error::KeyMismatch(format!(
            "{} matches, {} qualities, {} flags",
            matches.len(),
            h.len(),
            flags.len()
        )));
    }
    let mut acc: BTreeMap<(u64, i32), (f64, usize, f64, usize)> = BTreeMap::new();
    for ((m, &q), &top) in matches.iter().zip(h).zip(flags) {
        let e = acc.entry((m.firm_id, m.year)).or_default();
        if top {
            e.0 += q;
            e.1 += 1;
        } else {
            e.2 += q;
            e.3 += 1;
        }
    }
    let mut dropped = 0;
    let mut out = Vec::with_capacity(acc.len());
    for ((firm_id, year), (ty, nt, sx, nn)) in acc {
        if nn == 0 || nt == 0 {
            dropped += 1;
            continue;
        }
        out.push(FirmQuality {
            firm_id,
            year,
            ln_y: ty / nt as f64,
            ln_x: sx / nn as f64,
            n_top: nt,
            n_nontop: nn,
        });
    }
    Ok((out, dropped))
}

pub const COMPONENTS: [&str; 5] = ["worker", "firm", "xb", "year", "residual"];

/// Firm-size bins by firm-year employment: 1-9, 10-19, 20-99, 100-499, 500+.
pub const SIZE_BINS: [(usize, usize); 5] = [(1, 9), (10, 19), (20, 99), (100, 499), (500, usize::MAX)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub group: String,
    pub n: usize,
    pub var_lnw: f64,
    /// Variances in [`COMPONENTS`] order.
    pub var: [f64; 5],
    /// Covariances of all component pairs `(i, j)` with `i < j`, row-major.
    pub cov: Vec<((usize, usize), f64)>,
}

impl VarianceRow {
    /// `Var(ln w) - sum Var - 2 sum Cov`, zero up to rounding.
    pub fn closure_gap(&self) -> f64 {
        self.var_lnw - self.var.iter().sum::<f64>() - 2.0 * self.cov.iter().map(|c| c.1).sum::<f64>()
    }

    pub fn share(&self, component: usize) -> f64 {
        self.var[component] / self.var_lnw
    }
}

fn decompose(group: String, parts: &[[f64; 5]]) -> VarianceRow {
    let n = parts.len();
    let nf = n.max(1) as f64;
    let mut mean = [0.0; 5];
    for p in parts {
        for k in 0..5 {
            mean[k] += p[k] / nf;
        }
    }
    let mut m2 = [[0.0; 5]; 5];
    let mut total_mean = 0.0;
    for p in parts {
        total_mean += p.iter().sum::<f64>() / nf;
    }
    let mut var_lnw = 0.0;
    for p in parts {
        let d: Vec<f64> = (0..5).map(|k| p[k] - mean[k]).collect();
        for i in 0..5 {
            for j in i..5 {
                m2[i][j] += d[i] * d[j] / nf;
            }
        }
        var_lnw += (p.iter().sum::<f64>() - total_mean).powi(2) / nf;
    }
    let var = [m2[0][0], m2[1][1], m2[2][2], m2[3][3], m2[4][4]];
    let mut cov = Vec::new();
    for i in 0..5 {
        for j in i + 1..5 {
            cov.push(((i, j), m2[i][j]));
        }
    }
    VarianceRow { group, n, var_lnw, var, cov }
}

/// Variance decomposition of log earnings (net of the intercept), overall
/// and by firm-size bin. Population moments.
pub fn variance_decomposition(est: &AkmEstimate, matches: &[MatchRecord]) -> Result<Vec<VarianceRow>> {
    if est.residuals.len() != matches.len() {
        return Err(Error::KeyMismatch("estimate residuals do not align with matches".into()));
    }
    let mut size: HashMap<(u64, i32), usize> = HashMap::new();
    for m in matches {
        *size.entry((m.firm_id, m.year)).or_default() += 1;
    }
    let mut all = Vec::with_capacity(matches.len());
    let mut binned: Vec<Vec<[f64; 5]>> = vec![Vec::new(); SIZE_BINS.len()];
    for (m, &e) in matches.iter().zip(&est.residuals) {
        let a = est.worker_effect(m.worker_id).ok_or(Error::UnknownWorker(m.worker_id))?;
        let f = est
            .firm_effect(m.firm_id)
            .ok_or_else(|| Error::KeyMismatch(format!("unknown firm {}", m.firm_id)))?;
        let row = [a, f, est.xb(m), est.year_effect(m.year), e];
        let s = size[&(m.firm_id, m.year)];
        let b = SIZE_BINS.iter().position(|&(lo, hi)| s >= lo && s <= hi).expect("bins cover sizes");
        binned[b].push(row);
        all.push(row);
    }
    let mut out = vec![decompose("all".into(), &all)];
    for (b, rows) in binned.iter().enumerate() {
        let (lo, hi) = SIZE_BINS[b];
        let label = if hi == usize::MAX { format!("{lo}+") } else { format!("{lo}-{hi}") };
        out.push(decompose(label, rows));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(worker_id: u64, firm_id: u64, year: i32, earnings: f64) -> MatchRecord {
        MatchRecord {
            worker_id,
            firm_id,
            year,
            earnings,
            age: 40,
            sex: 0,
            alpha_true: 0.0,
            is_top: false,
            is_owner: false,
        }
    }

    #[test]
    fn two_thirds_rule() {
        let ms = vec![rec(1, 1, 2003, 100_000.0), rec(1, 2, 2003, 50_000.0)];
        let (out, rep) = apply_sample_screens(&ms, &ScreenConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].firm_id, 1);
        assert_eq!(rep.dropped_multiple, 1);
        let ms = vec![rec(1, 1, 2003, 100_000.0), rec(1, 2, 2003, 70_000.0), rec(1, 3, 2003, 69_000.0)];
        let (out, _) = apply_sample_screens(&ms, &ScreenConfig::default());
        assert_eq!(out.iter().map(|m| m.firm_id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn age_floor_owner_and_empty() {
        let mut young = rec(1, 1, 2003, 50_000.0);
        young.age = 19;
        let mut owner = rec(2, 1, 2003, 50_000.0);
        owner.is_owner = true;
        let poor = rec(3, 1, 2003, 100.0);
        let (out, rep) = apply_sample_screens(&[young, owner, poor], &ScreenConfig::default());
        assert!(out.is_empty());
        assert_eq!((rep.dropped_age, rep.dropped_owner, rep.dropped_floor), (1, 1, 1));
        let (out, rep) = apply_sample_screens(&[], &ScreenConfig::default());
        assert!(out.is_empty());
        assert_eq!(rep, ScreenReport::default());
    }

    #[test]
    fn components_and_bridge() {
        let mut ms = Vec::new();
        for w in 0..9 {
            ms.push(rec(w, 1 + w % 3, 2003, 1.0));
            ms.push(rec(w, 1 + (w + 1) % 3, 2004, 1.0));
        }
        ms.push(rec(100, 10, 2003, 1.0));
        ms.push(rec(100, 11, 2004, 1.0));
        let (out, st) = largest_connected_set(&ms);
        assert_eq!(out.len(), 18);
        assert_eq!(st.n_components, 2);
        assert_eq!(st.sizes, vec![18, 2]);
        ms.push(rec(200, 1, 2005, 1.0));
        ms.push(rec(200, 10, 2006, 1.0));
        let (out, st) = largest_connected_set(&ms);
        assert_eq!(out.len(), ms.len());
        assert_eq!(st.n_components, 1);
    }

    #[test]
    fn tie_goes_to_smallest_firm() {
        let ms = vec![rec(1, 5, 2003, 1.0), rec(2, 3, 2003, 1.0)];
        let (out, _) = largest_connected_set(&ms);
        assert_eq!(out[0].firm_id, 3);
    }

    #[test]
    fn top_worker_rules() {
        let ms = vec![rec(1, 1, 2003, 100.0), rec(2, 1, 2003, 99.6), rec(3, 1, 2003, 50.0)];
        assert_eq!(identify_top_workers(&ms), vec![true, true, false]);
        let ms = vec![rec(1, 1, 2003, 100.0), rec(2, 1, 2003, 99.4)];
        assert_eq!(identify_top_workers(&ms), vec![true, false]);
        let ms = vec![rec(7, 1, 2003, 100.0)];
        assert_eq!(identify_top_workers(&ms), vec![true]);
    }

    #[test]
    fn quality_arithmetic() {
        let ms = vec![rec(1, 1, 2003, 3.0), rec(2, 1, 2003, 1.0), rec(3, 1, 2003, 1.0), rec(4, 2, 2003, 1.0)];
        let (q, dropped) = firm_quality(&ms, &[1.0, 0.2, 0.4, 0.0], &[true, false, false, true]).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(q.len(), 1);
        assert!((q[0].ln_y - 1.0).abs() < 1e-15 && (q[0].ln_x - 0.3).abs() < 1e-15);
        let ms = vec![rec(1, 1, 2003, 3.0), rec(2, 1, 2003, 3.0), rec(3, 1, 2003, 1.0)];
        let (q, _) = firm_quality(&ms, &[1.0, 0.8, 0.1], &[true, true, false]).unwrap();
        assert!((q[0].ln_y - 0.9).abs() < 1e-15);
    }

    #[test]
    fn not_connected_is_rejected() {
        let ms = vec![rec(1, 1, 2003, 10.0), rec(2, 2, 2003, 12.0)];
        assert_eq!(
            estimate_akm(&ms, &AkmSpec::default()).unwrap_err(),
            Error::NotConnected { components: 2 }
        );
    }
}

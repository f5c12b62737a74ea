//! Run configuration.
//!
//! A TOML document with one table per stage. `[sector.N]` tables override
//! individual fields of `[params]` for sector `N`. The resolved configuration
//! is echoed as flat dotted `key = value` lines, which parse back to the same
//! configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggdecomp::Variant;
use crate::akm::{AkmSpec, ScreenConfig};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::prodfn::PfOptions;
use crate::synth::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoConfig {
    /// Values with a log below this are dropped.
    pub threshold: f64,
    /// `y` for top-worker qualities, `x` for mean non-top qualities.
    pub series: String,
    /// Pool all years with year dummies instead of fitting a single year.
    pub year_dummies: bool,
    /// Year to fit when not pooling; the first year when unset.
    pub year: Option<i32>,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        ParetoConfig { threshold: -0.2, series: "y".into(), year_dummies: false, year: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub variant: Variant,
    /// Growth windows as `[start, end]`; the full panel when empty.
    pub windows: Vec<[i32; 2]>,
    /// Normalize plot series to zero in the first year.
    pub normalize: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { variant: Variant::TopBased, windows: vec![[2003, 2015], [2003, 2008], [2008, 2015]], normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub reps: usize,
    pub n_firms: usize,
    pub years: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { reps: 20, n_firms: 2000, years: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Sectors to estimate; all when empty.
    pub sectors: Vec<u32>,
    pub sim: SimConfig,
    pub params: ModelParams,
    pub sector: BTreeMap<String, toml::Table>,
    pub screen: ScreenConfig,
    pub akm: AkmSpec,
    pub pf: PfOptions,
    pub pareto: ParetoConfig,
    pub decompose: DecomposeConfig,
    pub montecarlo: MonteCarloConfig,
}

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::ConfigParse(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(parse_err)?;
        cfg.sector_params()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.display().to_string()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Base parameters with each sector's overrides applied.
    pub fn sector_params(&self) -> Result<Vec<ModelParams>> {
        let n = self.sim.n_sectors;
        for key in self.sector.keys() {
            match key.parse::<usize>() {
                Ok(s) if s < n => {}
                _ => return Err(Error::ConfigParse(format!("sector `{key}` is not in 0..{n}"))),
            }
        }
        if self.sector.is_empty() {
            return Ok(vec![self.params.clone()]);
        }
        let base = toml::Table::try_from(&self.params).map_err(parse_err)?;
        (0..n)
            .map(|s| {
                let mut t = base.clone();
                if let Some(over) = self.sector.get(&s.to_string()) {
                    for (k, v) in over {
                        t.insert(k.clone(), v.clone());
                    }
                }
                t.try_into::<ModelParams>().map_err(|e| Error::ConfigParse(format!("sector {s}: {e}")))
            })
            .collect()
    }

    /// Simulation settings with the resolved sector parameters.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let sim = SimConfig { params: self.sector_params()?, ..self.sim.clone() };
        sim.validate()?;
        Ok(sim)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        self.pf.seed = seed;
    }

    pub fn wants_sector(&self, sector: u32) -> bool {
        self.sectors.is_empty() || self.sectors.contains(&sector)
    }

    /// Flat `key = value` lines in a fixed order.
    pub fn manifest(&self) -> Result<String> {
        let table = toml::Table::try_from(self).map_err(parse_err)?;
        let mut out = String::new();
        flatten("", &table, &mut out);
        Ok(out)
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut String) {
    let mut keys: Vec<&String> = table.keys().collect();
    keys.sort();
    for k in keys {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match &table[k] {
            toml::Value::Table(t) if !t.is_empty() => flatten(&path, t, out),
            v => out.push_str(&format!("{path} = {v}\n")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn manifest_parses_back() {
        let mut cfg = RunConfig::from_toml(
            "sectors = [1]\n[sim]\nn_sectors = 2\nseed = 9\n[sim.drift]\nomega = 0.02\n[sector.1]\ntheta = 0.3\n[pf]\nbootstrap = 5\n",
        )
        .unwrap();
        cfg.pf.grad_tol = 0.1 + 0.2;
        let text = cfg.manifest().unwrap();
        assert!(text.contains("sector.1.theta = 0.3\n"), "{text}");
        assert!(text.contains("sim.drift.omega = 0.02\n"));
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.manifest().unwrap(), text);
    }

    #[test]
    fn sector_overrides_merge() {
        let cfg = RunConfig::from_toml("[sim]\nn_sectors = 3\n[params]\nalpha_k = 0.1\n[sector.2]\ntheta = 0.3\n").unwrap();
        let p = cfg.sector_params().unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].theta, ModelParams::default().theta);
        assert_eq!(p[2].theta, 0.3);
        assert!(p.iter().all(|q| q.alpha_k == 0.1));
    }

    #[test]
    fn parse_errors() {
        for bad in ["[sim]\nn_firms = \"x\"\n", "[nope]\n", "[sector.5]\ntheta = 0.3\n", "[sector.0]\ntheta = true\n", "[sim\n"] {
            assert!(matches!(RunConfig::from_toml(bad), Err(Error::ConfigParse(_))), "{bad}");
        }
    }
}

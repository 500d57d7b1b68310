//! Configuration resolution: flags, then the TOML file, then built-in defaults.
//!
//! ```toml
//! [solver]
//! tau = 0.4
//! q = 10
//! weights_mode = "pan_guided"   # or "unit_weights"
//!
//! [noise]
//! sigma = 10                    # 8-bit scale
//! sigma_range = [5, 30]
//! impulse_range = [0.05, 0.30]
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use pandenoise::noise::{NoiseCase, NoiseSpec};
use pandenoise::{SolverConfig, WeightsMode};
use serde::Deserialize;

use crate::{NoiseFlags, SolverFlags};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: Option<f64>,
    pub sigma_range: Option<[f64; 2]>,
    pub affected_fraction: Option<f64>,
    pub impulse_range: Option<[f64; 2]>,
    pub stripe_range: Option<[f64; 2]>,
    pub stripe_amplitude: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub solver: Option<SolverConfig>,
    pub noise: Option<NoiseSection>,
}

pub fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi`, got {s:?}"));
    }
    let lo = parts[0].parse::<f64>().map_err(|e| e.to_string())?;
    let hi = parts[1].parse::<f64>().map_err(|e| e.to_string())?;
    Ok([lo, hi])
}

pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn resolve_solver(flags: &SolverFlags) -> Result<SolverConfig> {
    let mut cfg = load(flags.config.as_deref())?.solver.unwrap_or_default();
    macro_rules! overlay {
        ($($f:ident),*) => { $( if let Some(v) = flags.$f { cfg.$f = v; } )* };
    }
    overlay!(tau, beta, lambda, rank, q, rho, tol, max_iter, corr_window);
    if flags.mu0.is_some() {
        cfg.mu0 = flags.mu0;
    }
    if flags.unit_weights {
        cfg.weights_mode = WeightsMode::UnitWeights;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_noise(case_id: u8, seed: u64, file: Option<&Path>, flags: &NoiseFlags) -> Result<NoiseSpec> {
    let case = NoiseCase::from_index(case_id)?;
    let section = load(file)?.noise.unwrap_or_default();
    let mut spec = NoiseSpec::new(case, seed);
    let pick = |flag: Option<[f64; 2]>, file: Option<[f64; 2]>| flag.or(file);
    if let Some(s) = flags.sigma.or(section.sigma) {
        if s < 0.0 {
            bail!("sigma must be non-negative");
        }
        spec.sigma_iid = s / 255.0;
    }
    if let Some([lo, hi]) = pick(flags.sigma_range, section.sigma_range) {
        spec.sigma_range = [lo / 255.0, hi / 255.0];
    }
    if let Some(f) = flags.affected_fraction.or(section.affected_fraction) {
        spec.affected_fraction = f;
    }
    if let Some(r) = pick(flags.impulse_range, section.impulse_range) {
        spec.impulse_ratio_range = r;
    }
    if let Some(r) = pick(flags.stripe_range, section.stripe_range) {
        spec.stripe_ratio_range = r;
    }
    if let Some(r) = pick(flags.stripe_amplitude, section.stripe_amplitude) {
        spec.stripe_amplitude_range = r;
    }
    spec.validate()?;
    Ok(spec)
}

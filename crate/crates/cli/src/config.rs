//! Flat `key = value` config files for simulations and sweeps.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so
//! typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::Path;

use poqsim_core::mc_sim::{KPolicy, Scheduling, SeedMode, SimConfig, SweepGrid};

use crate::error::CliError;

const SIM_KEYS: &[&str] = &[
    "rounds",
    "seed",
    "alpha_f",
    "beta_f",
    "alpha_m",
    "beta_m",
    "k",
    "k_policy",
    "scheduling",
];
const GRID_KEYS: &[&str] = &["alpha_f", "beta_f", "alpha_m", "beta_m", "k", "seed_mode"];

pub fn parse_flat(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::validation(format!("{origin}:{}: expected 'key = value'", idx + 1))
        })?;
        let key = key.trim().to_string();
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::validation(format!(
                "{origin}:{}: duplicate key '{key}'",
                idx + 1
            )));
        }
    }
    Ok(out)
}

fn read_flat(path: &Path, allowed: &[&str]) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let map = parse_flat(&text, &path.display().to_string())?;
    if let Some(bad) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(CliError::validation(format!(
            "{}: unknown key '{bad}' (expected one of {})",
            path.display(),
            allowed.join(", ")
        )));
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::validation(format!("invalid value '{value}' for '{key}'")))
}

pub fn parse_k_policy(value: &str) -> Result<KPolicy, CliError> {
    match value {
        "fixed" => Ok(KPolicy::Fixed),
        "uniform_1_to_3" => Ok(KPolicy::UniformOneToThree),
        other => Err(CliError::validation(format!(
            "unknown k_policy '{other}' (fixed | uniform_1_to_3)"
        ))),
    }
}

/// Command-line / environment overrides; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct SimOverrides {
    pub seed: Option<u64>,
    pub rounds: Option<u64>,
    pub alpha_f: Option<f64>,
    pub beta_f: Option<f64>,
    pub alpha_m: Option<f64>,
    pub beta_m: Option<f64>,
    pub k: Option<usize>,
    pub k_policy: Option<String>,
}

/// Defaults, then the config file, then overrides.
pub fn resolve_sim_config(
    file: Option<&Path>,
    overrides: &SimOverrides,
) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::default();
    if let Some(path) = file {
        for (key, value) in read_flat(path, SIM_KEYS)? {
            let v = value.as_str();
            match key.as_str() {
                "rounds" => cfg.rounds = parse_value(&key, v)?,
                "seed" => cfg.seed = parse_value(&key, v)?,
                "alpha_f" => cfg.params.alpha_f = parse_value(&key, v)?,
                "beta_f" => cfg.params.beta_f = parse_value(&key, v)?,
                "alpha_m" => cfg.params.alpha_m = parse_value(&key, v)?,
                "beta_m" => cfg.params.beta_m = parse_value(&key, v)?,
                "k" => cfg.params.k = parse_value(&key, v)?,
                "k_policy" => cfg.k_policy = parse_k_policy(v)?,
                "scheduling" => {
                    if v != "uniform" {
                        return Err(CliError::validation(format!(
                            "unsupported scheduling '{v}' (uniform)"
                        )));
                    }
                    cfg.scheduling = Scheduling::Uniform;
                }
                _ => unreachable!("filtered by read_flat"),
            }
        }
    }
    let o = overrides;
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = o.alpha_f {
        cfg.params.alpha_f = v;
    }
    if let Some(v) = o.beta_f {
        cfg.params.beta_f = v;
    }
    if let Some(v) = o.alpha_m {
        cfg.params.alpha_m = v;
    }
    if let Some(v) = o.beta_m {
        cfg.params.beta_m = v;
    }
    if let Some(v) = o.k {
        cfg.params.k = v;
    }
    if let Some(v) = &o.k_policy {
        cfg.k_policy = parse_k_policy(v)?;
    }
    if cfg.rounds == 0 {
        return Err(CliError::validation("rounds must be >= 1"));
    }
    cfg.params
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Grid file: comma-separated value lists per parameter.
pub fn read_grid(path: &Path) -> Result<(SweepGrid, SeedMode), CliError> {
    let mut grid = SweepGrid::default();
    let mut mode = SeedMode::PerPoint;
    for (key, value) in read_flat(path, GRID_KEYS)? {
        match key.as_str() {
            "alpha_f" => grid.alpha_f = parse_list(&key, &value)?,
            "beta_f" => grid.beta_f = parse_list(&key, &value)?,
            "alpha_m" => grid.alpha_m = parse_list(&key, &value)?,
            "beta_m" => grid.beta_m = parse_list(&key, &value)?,
            "k" => grid.k = parse_list(&key, &value)?,
            "seed_mode" => {
                mode = match value.as_str() {
                    "per_point" => SeedMode::PerPoint,
                    "shared" => SeedMode::Shared,
                    other => {
                        return Err(CliError::validation(format!(
                            "unknown seed_mode '{other}' (per_point | shared)"
                        )))
                    }
                }
            }
            _ => unreachable!("filtered by read_flat"),
        }
    }
    if grid.is_empty() {
        return Err(CliError::validation(format!(
            "{}: grid has no values",
            path.display()
        )));
    }
    Ok((grid, mode))
}

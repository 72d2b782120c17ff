use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use nagumo_core::chaining::{ConvolutionSetup, GrowthExperimentConfig, GrowthProcess};
use nagumo_core::exit_stats::ExitConfig;
use nagumo_core::grid::GridSpec;
use nagumo_core::spde::{InitialCondition, Scheme, SimConfig};
use nagumo_core::wave::NagumoParams;

use crate::CliError;

fn default_grid() -> GridSpec {
    GridSpec::new(20.0, 512).expect("valid default grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub params: NagumoParams,
    pub grid: GridSpec,
    /// Noise amplitudes for which `Φ_σ, c_σ` are computed.
    pub sigmas: Vec<f64>,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            params: NagumoParams::default(),
            grid: default_grid(),
            sigmas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    pub initial: InitialCondition,
    pub pad_factor: usize,
    /// Write `(t, x, U)` every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

fn default_sim() -> SimConfig {
    SimConfig {
        params: NagumoParams::default(),
        grid: default_grid(),
        dt: 0.005,
        t_end: 10.0,
        seed: 1,
        scheme: Scheme::SemiImplicit,
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            sim: default_sim(),
            initial: InitialCondition::ExactWave,
            pad_factor: 2,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitCmdConfig {
    pub eta: f64,
    pub epsilon: Option<f64>,
    pub sigma_list: Vec<f64>,
    pub t_horizon: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub sim: SimConfig,
    pub initial: InitialCondition,
    pub pad_factor: usize,
}

impl Default for ExitCmdConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            epsilon: None,
            sigma_list: vec![0.08, 0.10, 0.12, 0.14],
            t_horizon: 20.0,
            n_paths: 400,
            master_seed: 1,
            sim: default_sim(),
            initial: InitialCondition::ExactWave,
            pad_factor: 2,
        }
    }
}

impl From<&ExitCmdConfig> for ExitConfig {
    fn from(c: &ExitCmdConfig) -> Self {
        ExitConfig {
            eta: c.eta,
            epsilon: c.epsilon,
            sigma_list: c.sigma_list.clone(),
            t_horizon: c.t_horizon,
            n_paths: c.n_paths,
            master_seed: c.master_seed,
            sim: c.sim,
            initial: c.initial,
            pad_factor: c.pad_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainingConfig {
    pub horizons: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub process: GrowthProcess,
    pub convolution: ConvolutionSetup,
    /// Horizons for the OU covering-number and Dudley table; empty skips it.
    pub metric_horizons: Vec<f64>,
    pub metric_nus: Vec<f64>,
}

impl Default for ChainingConfig {
    fn default() -> Self {
        Self {
            horizons: vec![10.0, 100.0, 1000.0, 10000.0],
            dt: 0.05,
            n_paths: 2000,
            seed: 1,
            process: GrowthProcess::ScalarOu,
            convolution: ConvolutionSetup::default(),
            metric_horizons: Vec::new(),
            metric_nus: vec![0.1, 0.2, 0.5],
        }
    }
}

impl ChainingConfig {
    pub fn growth(&self) -> GrowthExperimentConfig {
        GrowthExperimentConfig {
            horizons: self.horizons.clone(),
            dt: self.dt,
            n_paths: self.n_paths,
            seed: self.seed,
            process: self.process,
            convolution: self.convolution,
        }
    }
}

/// Key holding the seed of each subcommand, if any.
pub fn seed_key(subcommand: &str) -> Option<&'static str> {
    match subcommand {
        "simulate" => Some("sim.seed"),
        "exit" => Some("master_seed"),
        "chaining" => Some("seed"),
        _ => None,
    }
}

/// Reads a config document. A run manifest is accepted too, in which case
/// its resolved `config` table is used.
pub fn load_table(path: &Path, subcommand: &str) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match (table.get("subcommand"), table.get("config")) {
        (Some(Value::String(s)), Some(Value::Table(cfg))) => {
            if s != subcommand {
                return Err(CliError::Config(format!(
                    "manifest was written by `{s}`, not `{subcommand}`"
                )));
            }
            Ok(cfg.clone())
        }
        _ => Ok(table),
    }
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies a dotted `key=value` override; the value is read as TOML and
/// falls back to a bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    set_path(table, key.trim(), parse_value(raw.trim()))
}

pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Defaults, then the document, then the overrides.
pub fn layered<T: Default + Serialize>(doc: Table, overrides: &[String]) -> Result<Table, CliError> {
    let mut t = to_table(&T::default())?;
    merge(&mut t, doc);
    for o in overrides {
        apply_override(&mut t, o)?;
    }
    Ok(t)
}

pub fn resolve<T: DeserializeOwned>(table: Table) -> Result<T, CliError> {
    T::deserialize(Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}

pub fn to_table<T: Serialize>(value: &T) -> Result<Table, CliError> {
    Table::try_from(value).map_err(|e| CliError::Config(format!("cannot record config: {e}")))
}

//! `nagumo`: wave profiles, tracked SPDE paths, exit-time ensembles and
//! chaining experiments from a TOML config.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::Table;

use crate::commands::RunOutput;
use crate::config::{
    layered, load_table, resolve, seed_key, set_path, to_table, ChainingConfig, ExitCmdConfig, SimulateConfig,
    WaveConfig,
};

pub const OUT_DIR_ENV: &str = "NAGUMO_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<nagumo_core::Error> for CliError {
    fn from(e: nagumo_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "nagumo", version, about = "Stochastic Nagumo front simulator")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: $NAGUMO_OUT_DIR, then ./nagumo-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic front, spectral data and stochastic waves.
    Wave(RunArgs),
    /// One tracked SPDE path.
    Simulate(RunArgs),
    /// Exit-time ensemble over a list of noise amplitudes.
    Exit(RunArgs),
    /// Supremum-growth experiment and OU metric table.
    Chaining(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config document (TOML) or a manifest from an earlier run.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set sim.dt=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed; overrides the seed entry of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    seed: Option<u64>,
    version: String,
    threads: usize,
    duration_seconds: f64,
    outputs: Vec<OutputRecord>,
    config: Table,
}

fn run_with<T>(
    name: &str,
    args: &RunArgs,
    seed_of: impl Fn(&T) -> Option<u64>,
    body: impl Fn(&T) -> Result<RunOutput, CliError>,
) -> Result<(Table, Option<u64>, RunOutput), CliError>
where
    T: Default + Serialize + serde::de::DeserializeOwned,
{
    let doc = load_table(&args.config, name)?;
    let mut table = layered::<T>(doc, &args.set)?;
    if let (Some(seed), Some(key)) = (args.seed, seed_key(name)) {
        let v = i64::try_from(seed).map_err(|_| CliError::Config(format!("seed {seed} exceeds i64 range")))?;
        set_path(&mut table, key, toml::Value::Integer(v))?;
    }
    let cfg: T = resolve(table)?;
    let resolved = to_table(&cfg)?;
    let out = body(&cfg)?;
    Ok((resolved, seed_of(&cfg), out))
}

fn write_outputs(dir: &Path, out: &RunOutput) -> Result<Vec<OutputRecord>, CliError> {
    std::fs::create_dir_all(dir)?;
    out.files
        .iter()
        .map(|(name, bytes)| {
            std::fs::write(dir.join(name), bytes)?;
            Ok(OutputRecord {
                path: name.clone(),
                sha256: hex::encode(Sha256::digest(bytes)),
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let start = Instant::now();
    let name = match &cli.command {
        Command::Wave(_) => "wave",
        Command::Simulate(_) => "simulate",
        Command::Exit(_) => "exit",
        Command::Chaining(_) => "chaining",
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    let (config, seed, out) = pool.install(|| match &cli.command {
        Command::Wave(a) => run_with::<WaveConfig>(name, a, |_| None, commands::wave),
        Command::Simulate(a) => run_with::<SimulateConfig>(name, a, |c| Some(c.sim.seed), commands::simulate),
        Command::Exit(a) => run_with::<ExitCmdConfig>(name, a, |c| Some(c.master_seed), commands::exit),
        Command::Chaining(a) => run_with::<ChainingConfig>(name, a, |c| Some(c.seed), commands::chaining),
    })?;
    let dir = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nagumo-out"));
    let outputs = write_outputs(&dir, &out)?;
    let manifest = RunManifest {
        subcommand: name.to_string(),
        seed,
        version: format!("nagumo {}", env!("CARGO_PKG_VERSION")),
        threads,
        duration_seconds: start.elapsed().as_secs_f64(),
        outputs,
        config,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    info!("wrote {} files to {}", out.files.len() + 1, dir.display());
    Ok(out.partial)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            error!("some ensemble paths failed; results are partial");
            ExitCode::from(4)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.code())
        }
    }
}

use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use nagumo_core::chaining::{covering_number, dudley_integral, sup_growth_experiment, IncrementMetric};
use nagumo_core::exit_stats::{run_ensemble, scaling_fit, ExitConfig};
use nagumo_core::freezing::{solve_stochastic_wave, Freezer, PhaseRecord};
use nagumo_core::grid::norm_h1;
use nagumo_core::io::{
    profile_table, report_json, ColumnTable, SCHEMA_EXIT, SCHEMA_GROWTH, SCHEMA_METRIC, SCHEMA_SCALING,
    SCHEMA_SIMULATION, SCHEMA_WAVE,
};
use nagumo_core::noise::{NoiseSampler, NoiseStream};
use nagumo_core::spde::{initial_condition, PathState, Stepper};
use nagumo_core::stats::linear_fit;
use nagumo_core::wave::{compute_spectral_data, solve_deterministic_wave};
use nagumo_core::Error;

use crate::config::{ChainingConfig, ExitCmdConfig, SimulateConfig, WaveConfig};
use crate::CliError;

/// Files produced by a command, in write order.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    /// Some ensemble paths failed.
    pub partial: bool,
}

impl RunOutput {
    fn text(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body.into_bytes()));
    }

    fn json<T: Serialize>(&mut self, name: &str, schema: &str, body: &T) -> Result<(), CliError> {
        let text = report_json(schema, body).map_err(CliError::from)?;
        self.text(name, text + "\n");
        Ok(())
    }
}

fn numerical(e: Error) -> CliError {
    CliError::Numerical(e.to_string())
}

fn config_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Serialize)]
struct SigmaWaveRow {
    sigma: f64,
    c_sigma: f64,
    speed_shift: f64,
    h1_distance: f64,
    iterations: usize,
    final_residual: f64,
}

#[derive(Serialize)]
struct WaveReport {
    a: f64,
    rho: f64,
    c0: f64,
    exact_speed: f64,
    beta: f64,
    neutral_eigenvalue: f64,
    second_eigenvalue: f64,
    residual_history: Vec<f64>,
    sigmas: Vec<SigmaWaveRow>,
    /// Log-log slopes of `‖Φ_σ - Φ₀‖_{H¹}` and `|c_σ - c₀|` against σ.
    h1_slope: Option<f64>,
    speed_slope: Option<f64>,
}

pub fn wave(cfg: &WaveConfig) -> Result<RunOutput, CliError> {
    cfg.params.validate().map_err(config_err)?;
    if cfg.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(CliError::Config(format!("sigmas must be non-negative: {:?}", cfg.sigmas)));
    }
    let p0 = cfg.params.with_sigma(0.0).map_err(config_err)?;
    let w = solve_deterministic_wave(&p0, &cfg.grid, None).map_err(numerical)?;
    let spec = compute_spectral_data(&w, &p0).map_err(numerical)?;
    info!("c0 = {}, beta = {}", w.speed, spec.beta);
    let mut out = RunOutput::default();
    let table = profile_table(&w, Some(&spec))
        .with_meta("a", p0.a)
        .with_meta("rho", p0.rho)
        .with_meta("beta", format!("{:e}", spec.beta));
    out.text("wave.dat", table.to_text());

    let mut rows = Vec::new();
    for (k, &sigma) in cfg.sigmas.iter().enumerate() {
        let p = cfg.params.with_sigma(sigma).map_err(config_err)?;
        let sw = solve_stochastic_wave(&p, &cfg.grid, &spec, &w).map_err(numerical)?;
        let diff = sw.profile.sub(&w.profile).map_err(numerical)?;
        info!("sigma = {sigma}: c_sigma = {}", sw.speed);
        let mut t = ColumnTable::new(&["x", "phi"])
            .with_meta("sigma", sigma)
            .with_meta("speed", format!("{:e}", sw.speed));
        t.columns[0] = cfg.grid.coordinates();
        t.columns[1] = sw.profile.values().to_vec();
        out.text(&format!("wave_sigma_{k}.dat"), t.to_text());
        rows.push(SigmaWaveRow {
            sigma,
            c_sigma: sw.speed,
            speed_shift: (sw.speed - w.speed).abs(),
            h1_distance: norm_h1(&diff),
            iterations: sw.residual_history.len(),
            final_residual: sw.residual_history.last().copied().unwrap_or(0.0),
        });
    }
    let slope = |f: &dyn Fn(&SigmaWaveRow) -> f64| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.sigma > 0.0 && f(r) > 0.0)
            .map(|r| (r.sigma.ln(), f(r).ln()))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_fit(&x, &y).ok().map(|fit| fit.slope)
    };
    let report = WaveReport {
        a: p0.a,
        rho: p0.rho,
        c0: w.speed,
        exact_speed: p0.exact_speed(),
        beta: spec.beta,
        neutral_eigenvalue: spec.neutral_eigenvalue,
        second_eigenvalue: spec.second_eigenvalue,
        residual_history: w.residual_history.clone(),
        h1_slope: slope(&|r| r.h1_distance),
        speed_slope: slope(&|r| r.speed_shift),
        sigmas: rows,
    };
    out.json("wave.json", SCHEMA_WAVE, &report)?;
    Ok(out)
}

#[derive(Serialize)]
struct Event {
    t: f64,
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct SimulationReport {
    seed: u64,
    sigma: f64,
    c_sigma: f64,
    steps: usize,
    t_final: f64,
    gamma_final: f64,
    gamma_quadratic_variation: f64,
    max_v_l2: f64,
    max_v_h1: f64,
    increments_consumed: u64,
    events: Vec<Event>,
}

pub fn simulate(cfg: &SimulateConfig) -> Result<RunOutput, CliError> {
    let sim = cfg.sim;
    sim.validate().map_err(config_err)?;
    let p = sim.params;
    let p0 = p.with_sigma(0.0).map_err(config_err)?;
    let w = solve_deterministic_wave(&p0, &sim.grid, None).map_err(numerical)?;
    let spec = compute_spectral_data(&w, &p0).map_err(numerical)?;
    let sw = solve_stochastic_wave(&p, &sim.grid, &spec, &w).map_err(numerical)?;
    let freezer = Freezer::new(&sw, &spec, &p).map_err(numerical)?;
    let sampler = Arc::new(NoiseSampler::build(sim.grid, cfg.pad_factor).map_err(config_err)?);
    let mut stream = NoiseStream::for_path(sampler, sim.seed, 0);
    let mut state: PathState = initial_condition(cfg.initial, &sw.profile, &sim.grid, &p).map_err(config_err)?;
    let mut stepper = Stepper::new(&sim).map_err(config_err)?;
    let mut ps = freezer.start(&state.u).map_err(numerical)?;

    let mut series = ColumnTable::new(&["t", "gamma", "v_l2", "v_h1", "a_sigma", "b_hs_sq", "kappa"])
        .with_meta("seed", sim.seed)
        .with_meta("sigma", p.sigma);
    let push = |t: &mut ColumnTable, r: PhaseRecord| {
        t.push_row(&[r.t, r.gamma, r.v_l2, r.v_h1, r.a_sigma, r.b_hs_sq, r.kappa])
    };
    push(&mut series, PhaseRecord::new(0.0, &ps)).map_err(numerical)?;
    let x = sim.grid.coordinates();
    let mut snapshots = ColumnTable::new(&["t", "x", "u"]).with_meta("every", cfg.snapshot_every);
    let snap = |t: f64, u: &[f64], table: &mut ColumnTable| -> Result<(), Error> {
        for (xi, ui) in x.iter().zip(u) {
            table.push_row(&[t, *xi, *ui])?;
        }
        Ok(())
    };
    if cfg.snapshot_every > 0 {
        snap(0.0, state.u.values(), &mut snapshots).map_err(numerical)?;
    }

    let mut events = Vec::new();
    let mut steps = 0;
    let (mut qv, mut max_l2, mut max_h1) = (0.0, 0.0f64, 0.0f64);
    for k in 0..sim.n_steps() {
        let prev = state.u.clone();
        let t = (k + 1) as f64 * sim.dt;
        let next = stepper
            .step(&mut state, &mut stream)
            .and_then(|xi| freezer.phase_step(&ps, &prev, &state.u, xi, sim.dt));
        match next {
            Ok(n) => {
                qv += (n.gamma - ps.gamma).powi(2);
                ps = n;
            }
            Err(e @ (Error::WaveLost { .. } | Error::FrontNearBoundary { .. })) => {
                let kind = if matches!(e, Error::WaveLost { .. }) { "wave-lost" } else { "front-near-boundary" };
                warn!("t = {t}: {e}");
                events.push(Event { t, kind, message: e.to_string() });
                break;
            }
            Err(e) => return Err(numerical(e)),
        }
        steps += 1;
        let rec = PhaseRecord::new(t, &ps);
        max_l2 = max_l2.max(rec.v_l2);
        max_h1 = max_h1.max(rec.v_h1);
        push(&mut series, rec).map_err(numerical)?;
        if cfg.snapshot_every > 0 && (k + 1) % cfg.snapshot_every == 0 {
            snap(t, state.u.values(), &mut snapshots).map_err(numerical)?;
        }
    }
    let report = SimulationReport {
        seed: sim.seed,
        sigma: p.sigma,
        c_sigma: sw.speed,
        steps,
        t_final: steps as f64 * sim.dt,
        gamma_final: ps.gamma,
        gamma_quadratic_variation: qv,
        max_v_l2: max_l2,
        max_v_h1: max_h1,
        increments_consumed: stream.consumed(),
        events,
    };
    let mut out = RunOutput::default();
    out.text("series.dat", series.to_text());
    if cfg.snapshot_every > 0 {
        out.text("snapshots.dat", snapshots.to_text());
    }
    out.json("simulate.json", SCHEMA_SIMULATION, &report)?;
    Ok(out)
}

#[derive(Serialize)]
struct FitFailure {
    error: String,
}

pub fn exit(cfg: &ExitCmdConfig) -> Result<RunOutput, CliError> {
    let ecfg = ExitConfig::from(cfg);
    ecfg.validate().map_err(config_err)?;
    let res = run_ensemble(&ecfg).map_err(numerical)?;
    let mut out = RunOutput {
        partial: res.failed_paths() > 0,
        ..Default::default()
    };
    let mut table = ColumnTable::new(&["sigma", "paths", "exits", "p_hat", "lo", "hi", "q10", "q50", "q90"])
        .with_meta("eta", res.eta)
        .with_meta("t_horizon", res.t_horizon)
        .with_meta("master_seed", res.master_seed);
    for r in &res.per_sigma {
        let q = r.quantiles.map(|v| v.unwrap_or(f64::NAN));
        table
            .push_row(&[
                r.sigma,
                r.path_count as f64,
                r.exit_count as f64,
                r.p_hat,
                r.wilson_interval.0,
                r.wilson_interval.1,
                q[0],
                q[1],
                q[2],
            ])
            .map_err(numerical)?;
    }
    out.text("exit_summary.dat", table.to_text());
    out.json("exit.json", SCHEMA_EXIT, &res)?;
    match scaling_fit(&res, cfg.eta) {
        Ok(fit) => out.json("fit.json", SCHEMA_SCALING, &fit)?,
        Err(e) => {
            warn!("scaling fit unavailable: {e}");
            out.json("fit.json", SCHEMA_SCALING, &FitFailure { error: e.to_string() })?
        }
    }
    if out.partial {
        warn!("{} paths failed", res.failed_paths());
    }
    Ok(out)
}

#[derive(Serialize)]
struct MetricRow {
    horizon: f64,
    d_max: f64,
    dudley: f64,
    nus: Vec<f64>,
    covering_numbers: Vec<u64>,
}

#[derive(Serialize)]
struct MetricTable {
    rows: Vec<MetricRow>,
}

pub fn chaining(cfg: &ChainingConfig) -> Result<RunOutput, CliError> {
    let g = cfg.growth();
    g.validate().map_err(config_err)?;
    if cfg.metric_nus.iter().any(|v| !(*v > 0.0)) || cfg.metric_horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Config("metric_nus and metric_horizons must be positive".into()));
    }
    let report = sup_growth_experiment(&g).map_err(numerical)?;
    info!(
        "ln T fit: slope {}, R² {}; log preferred: {}",
        report.log_fit.slope, report.log_fit.r_squared, report.log_preferred
    );
    let mut out = RunOutput::default();
    let mut table = ColumnTable::new(&["horizon", "mean_sup_sq", "std_error"]).with_meta("seed", cfg.seed);
    for r in &report.rows {
        table.push_row(&[r.horizon, r.mean_sup_sq, r.std_error]).map_err(numerical)?;
    }
    out.text("growth.dat", table.to_text());
    out.json("growth.json", SCHEMA_GROWTH, &report)?;
    if !cfg.metric_horizons.is_empty() {
        let rows = cfg
            .metric_horizons
            .iter()
            .map(|&h| {
                let m = IncrementMetric::ou(h)?;
                Ok(MetricRow {
                    horizon: h,
                    d_max: m.d_max(),
                    dudley: dudley_integral(&m)?,
                    nus: cfg.metric_nus.clone(),
                    covering_numbers: cfg
                        .metric_nus
                        .iter()
                        .map(|&nu| covering_number(&m, nu))
                        .collect::<Result<_, Error>>()?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()
            .map_err(numerical)?;
        out.json("metric.json", SCHEMA_METRIC, &MetricTable { rows })?;
    }
    Ok(out)
}

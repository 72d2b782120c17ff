//! The stability functional `N(t) = ‖V(t)‖² + ∫₀ᵗ e^{-ε(t-s)} ‖V(s)‖²_{H¹} ds`,
//! its first exit time over a level `η`, and seeded Monte Carlo ensembles of
//! tracked paths.

use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freezing::{solve_stochastic_wave, Freezer};
use crate::grid::{norm_h1_sq, norm_l2, GridFunction};
use crate::noise::{NoiseSampler, NoiseStream};
use crate::spde::{initial_condition, InitialCondition, PathState, SimConfig, Stepper};
use crate::stats::{linear_fit, quantile_sorted, wilson_interval, Z95};
use crate::wave::{compute_spectral_data, solve_deterministic_wave, SpectralData, WaveProfile};

/// Largest exit level accepted; above it the perturbation is no longer small
/// enough for the phase to stay meaningful.
pub const ETA_GUARD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTracker {
    pub l2_sq: f64,
    pub h1_accum: f64,
    pub epsilon: f64,
    pub n_value: f64,
    /// `‖V‖²_{H¹}` at the start of the next step (left endpoint).
    left_h1_sq: f64,
}

impl NormTracker {
    pub fn new(epsilon: f64, v0: &GridFunction) -> Self {
        Self::from_norms(epsilon, norm_l2(v0).powi(2), norm_h1_sq(v0))
    }

    pub fn from_norms(epsilon: f64, l2_sq: f64, h1_sq: f64) -> Self {
        Self {
            l2_sq,
            h1_accum: 0.0,
            epsilon,
            n_value: l2_sq,
            left_h1_sq: h1_sq,
        }
    }

    /// Advances by `dt` to a new perturbation `v`.
    pub fn update(&mut self, v: &GridFunction, dt: f64) {
        self.update_norms(norm_l2(v).powi(2), norm_h1_sq(v), dt);
    }

    /// As [`update`](Self::update), from precomputed squared norms.
    pub fn update_norms(&mut self, l2_sq: f64, h1_sq: f64, dt: f64) {
        self.h1_accum = (-self.epsilon * dt).exp() * self.h1_accum + dt * self.left_h1_sq;
        self.left_h1_sq = h1_sq;
        self.l2_sq = l2_sq;
        self.n_value = self.l2_sq + self.h1_accum;
    }
}

/// Strict exceedance `N > η`.
pub fn detect_exit(tr: &NormTracker, eta: f64) -> bool {
    tr.n_value > eta
}

/// First time in a `(t, N(t))` series with `N > η`.
pub fn first_exit_time(series: &[(f64, f64)], eta: f64) -> Option<f64> {
    series.iter().find(|(_, n)| *n > eta).map(|(t, _)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitConfig {
    pub eta: f64,
    /// Discount rate; `None` selects `β/2`.
    pub epsilon: Option<f64>,
    pub sigma_list: Vec<f64>,
    pub t_horizon: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Model, grid and step; `sigma`, `t_end` and `seed` are overridden.
    pub sim: SimConfig,
    pub initial: InitialCondition,
    pub pad_factor: usize,
}

impl ExitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eta > 0.0 && self.eta < ETA_GUARD) {
            return bad(format!("eta must lie in (0, {ETA_GUARD}), got {}", self.eta));
        }
        if !(self.t_horizon >= 2.0 && self.t_horizon.is_finite()) {
            return bad(format!("t_horizon must be at least 2, got {}", self.t_horizon));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be positive".into());
        }
        if self.sigma_list.is_empty() || self.sigma_list.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad(format!("sigma_list must be non-empty and non-negative: {:?}", self.sigma_list));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("epsilon must be positive, got {e}"));
            }
        }
        self.sim.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum PathOutcome {
    Survived { peak: f64 },
    Exited { t: f64, wave_lost: bool },
    Failed { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaResult {
    pub sigma: f64,
    pub c_sigma: f64,
    /// Completed paths (failed paths excluded).
    pub path_count: usize,
    pub exit_count: usize,
    pub wave_lost_count: usize,
    pub failed_count: usize,
    pub p_hat: f64,
    pub wilson_interval: (f64, f64),
    /// Sorted exit times.
    pub exit_times: Vec<f64>,
    pub quantiles: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitResult {
    pub eta: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub t_horizon: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub per_sigma: Vec<SigmaResult>,
}

impl ExitResult {
    pub fn failed_paths(&self) -> usize {
        self.per_sigma.iter().map(|r| r.failed_count).sum()
    }
}

/// Aggregates the outcomes of one σ.
pub fn summarize(sigma: f64, c_sigma: f64, outcomes: &[PathOutcome]) -> SigmaResult {
    let mut exit_times = Vec::new();
    let (mut lost, mut failed) = (0, 0);
    for o in outcomes {
        match *o {
            PathOutcome::Exited { t, wave_lost } => {
                exit_times.push(t);
                lost += wave_lost as usize;
            }
            PathOutcome::Failed { .. } => failed += 1,
            PathOutcome::Survived { .. } => {}
        }
    }
    exit_times.sort_by(f64::total_cmp);
    let path_count = outcomes.len() - failed;
    let exit_count = exit_times.len();
    let p_hat = if path_count > 0 { exit_count as f64 / path_count as f64 } else { 0.0 };
    SigmaResult {
        sigma,
        c_sigma,
        path_count,
        exit_count,
        wave_lost_count: lost,
        failed_count: failed,
        p_hat,
        wilson_interval: wilson_interval(exit_count, path_count, Z95),
        quantiles: [0.1, 0.5, 0.9].map(|q| quantile_sorted(&exit_times, q)),
        exit_times,
    }
}

/// Shared, immutable inputs of an ensemble on one grid.
pub struct EnsembleContext {
    pub wave: WaveProfile,
    pub spec: SpectralData,
    pub sampler: Arc<NoiseSampler>,
}

impl EnsembleContext {
    pub fn new(cfg: &ExitConfig) -> Result<Self> {
        let p = cfg.sim.params.with_sigma(0.0)?;
        let wave = solve_deterministic_wave(&p, &cfg.sim.grid, None)?;
        let spec = compute_spectral_data(&wave, &p)?;
        let sampler = Arc::new(NoiseSampler::build(cfg.sim.grid, cfg.pad_factor)?);
        Ok(Self { wave, spec, sampler })
    }
}

/// Runs one tracked path until exit or `t_horizon`.
pub fn run_tracked_path(
    cfg: &SimConfig,
    freezer: &Freezer<'_>,
    u0: &GridFunction,
    stream: &mut NoiseStream,
    epsilon: f64,
    eta: f64,
) -> PathOutcome {
    let outcome = |t: f64, e: Error| match e {
        Error::WaveLost { .. } => PathOutcome::Exited { t, wave_lost: true },
        _ => PathOutcome::Failed { t },
    };
    let mut ps = match freezer.start(u0) {
        Ok(ps) => ps,
        Err(e) => return outcome(0.0, e),
    };
    let mut tracker = NormTracker::new(epsilon, &ps.v);
    if detect_exit(&tracker, eta) {
        return PathOutcome::Exited { t: 0.0, wave_lost: false };
    }
    let mut stepper = match Stepper::new(cfg) {
        Ok(s) => s,
        Err(e) => return outcome(0.0, e),
    };
    let mut state = PathState {
        u: u0.clone(),
        t: 0.0,
        increments_consumed: 0,
    };
    let mut peak = tracker.n_value;
    for k in 0..cfg.n_steps() {
        let t = (k + 1) as f64 * cfg.dt;
        let prev = state.u.clone();
        let step = stepper
            .step(&mut state, stream)
            .and_then(|xi| freezer.phase_step(&ps, &prev, &state.u, xi, cfg.dt));
        match step {
            Ok(next) => ps = next,
            Err(e) => return outcome(t, e),
        }
        tracker.update(&ps.v, cfg.dt);
        peak = peak.max(tracker.n_value);
        if detect_exit(&tracker, eta) {
            return PathOutcome::Exited { t, wave_lost: false };
        }
    }
    PathOutcome::Survived { peak }
}

/// Exit statistics for every σ in the list. Path `i` uses random stream `i`
/// of `master_seed` at every σ, so the σ-sweep shares its noise.
pub fn run_ensemble(cfg: &ExitConfig) -> Result<ExitResult> {
    cfg.validate()?;
    let ctx = EnsembleContext::new(cfg)?;
    run_ensemble_with(cfg, &ctx)
}

pub fn run_ensemble_with(cfg: &ExitConfig, ctx: &EnsembleContext) -> Result<ExitResult> {
    cfg.validate()?;
    let epsilon = cfg.epsilon.unwrap_or(ctx.spec.beta / 2.0);
    if epsilon >= ctx.spec.beta {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must be below the spectral gap {}",
            ctx.spec.beta
        )));
    }
    let mut per_sigma = Vec::with_capacity(cfg.sigma_list.len());
    for &sigma in &cfg.sigma_list {
        let params = cfg.sim.params.with_sigma(sigma)?;
        let sim = SimConfig {
            params,
            t_end: cfg.t_horizon,
            seed: cfg.master_seed,
            ..cfg.sim
        };
        let sw = solve_stochastic_wave(&params, &sim.grid, &ctx.spec, &ctx.wave)?;
        let freezer = Freezer::new(&sw, &ctx.spec, &params)?;
        let u0 = initial_condition(cfg.initial, &sw.profile, &sim.grid, &params)?.u;
        let outcomes: Vec<PathOutcome> = (0..cfg.n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut stream = NoiseStream::for_path(ctx.sampler.clone(), cfg.master_seed, i);
                run_tracked_path(&sim, &freezer, &u0, &mut stream, epsilon, cfg.eta)
            })
            .collect();
        let summary = summarize(sigma, sw.speed, &outcomes);
        info!(
            "sigma = {sigma}: {} / {} exits ({} wave lost, {} failed)",
            summary.exit_count, summary.path_count, summary.wave_lost_count, summary.failed_count
        );
        per_sigma.push(summary);
    }
    Ok(ExitResult {
        eta: cfg.eta,
        epsilon,
        beta: ctx.spec.beta,
        t_horizon: cfg.t_horizon,
        n_paths: cfg.n_paths,
        master_seed: cfg.master_seed,
        per_sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub sigma: f64,
    pub x: f64,
    pub p_hat: f64,
    pub used: bool,
    /// `p̂ ≤ min(1, 2T e^{-κ̂ x})`.
    pub bound_consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub monotone: bool,
    pub points: Vec<ScalingPoint>,
    pub notes: Vec<String>,
}

/// `x(σ) = η / (σ(σ + √η))`.
pub fn scaling_variable(sigma: f64, eta: f64) -> f64 {
    eta / (sigma * (sigma + eta.sqrt()))
}

/// Regresses `-ln p̂` on `x(σ)` over the σ with `0 < p̂ < 1`.
pub fn scaling_fit(res: &ExitResult, eta: f64) -> Result<ScalingFit> {
    let mut rows: Vec<&SigmaResult> = res.per_sigma.iter().collect();
    rows.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    let monotone = rows.windows(2).all(|w| w[1].p_hat > w[0].p_hat);
    let mut notes = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in &rows {
        if r.sigma > 0.0 && r.p_hat > 0.0 && r.p_hat < 1.0 {
            xs.push(scaling_variable(r.sigma, eta));
            ys.push(-r.p_hat.ln());
        } else {
            notes.push(format!("sigma = {} excluded (p_hat = {})", r.sigma, r.p_hat));
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable sigma values (need 3); {}",
            xs.len(),
            notes.join("; ")
        )));
    }
    let fit = linear_fit(&xs, &ys)?;
    let points = rows
        .iter()
        .map(|r| {
            let x = if r.sigma > 0.0 { scaling_variable(r.sigma, eta) } else { f64::INFINITY };
            let bound = (2.0 * res.t_horizon * (-fit.slope * x).exp()).min(1.0);
            ScalingPoint {
                sigma: r.sigma,
                x,
                p_hat: r.p_hat,
                used: r.sigma > 0.0 && r.p_hat > 0.0 && r.p_hat < 1.0,
                bound_consistent: r.p_hat <= bound,
            }
        })
        .collect();
    Ok(ScalingFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        monotone,
        points,
        notes,
    })
}

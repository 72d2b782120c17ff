//! Semi-implicit Euler–Maruyama for
//! `dU = [ρU_xx + f(U)] dt + σ g(U) dW^Q` with `U(-L) = 1`, `U(L) = 0`.

use std::ops::ControlFlow;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::linalg::{Tridiagonal, TridiagonalLu};
use crate::noise::NoiseStream;
use crate::wave::NagumoParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub params: NagumoParams,
    pub grid: GridSpec,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be non-negative, got {}",
                self.t_end
            )));
        }
        if self.dt > self.grid.dx() {
            warn!("dt = {} exceeds dx = {}", self.dt, self.grid.dx());
        }
        Ok(())
    }

    /// Number of uniform steps of size `dt` needed to reach `t_end`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub u: GridFunction,
    pub t: f64,
    pub increments_consumed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    ExactWave,
    /// Adds `amplitude·sin(mode·πx/L)·sech(x)`.
    PerturbedWave { amplitude: f64, mode: u32 },
}

pub fn initial_condition(
    kind: InitialCondition,
    profile: &GridFunction,
    grid: &GridSpec,
    params: &NagumoParams,
) -> Result<PathState> {
    grid.ensure_same(profile.grid())?;
    let u = match kind {
        InitialCondition::ExactWave => profile.clone(),
        InitialCondition::PerturbedWave { amplitude, mode } => {
            if !amplitude.is_finite() {
                return Err(Error::InvalidParameter("perturbation amplitude must be finite".into()));
            }
            let l = grid.half_length();
            let bump = GridFunction::from_fn(*grid, |x| {
                (mode as f64 * std::f64::consts::PI * x / l).sin() / x.cosh()
            });
            let u = profile.axpy(amplitude, &bump)?;
            let (lo, hi) = params.chi_plateau;
            if u.values().iter().any(|&v| v < lo || v > hi) {
                warn!("perturbed initial data leaves the plateau of chi");
            }
            u
        }
    };
    Ok(PathState {
        u,
        t: 0.0,
        increments_consumed: 0,
    })
}

/// Receives the state after every step together with the increment used.
pub trait Observer {
    fn observe(&mut self, state: &PathState, xi: &[f64]) -> Result<ControlFlow<()>>;
}

impl<F> Observer for F
where
    F: FnMut(&PathState, &[f64]) -> Result<ControlFlow<()>>,
{
    fn observe(&mut self, state: &PathState, xi: &[f64]) -> Result<ControlFlow<()>> {
        self(state, xi)
    }
}

/// Prefactored implicit diffusion solve plus step buffers.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: SimConfig,
    lu: TridiagonalLu,
    r: f64,
    rhs: Vec<f64>,
    xi: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid.len();
        let r = cfg.dt * cfg.params.rho / (cfg.grid.dx() * cfg.grid.dx());
        let m = n - 2;
        let lu = Tridiagonal::new(vec![-r; m - 1], vec![1.0 + 2.0 * r; m], vec![-r; m - 1]).factor()?;
        Ok(Self {
            cfg: *cfg,
            lu,
            r,
            rhs: vec![0.0; m],
            xi: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Advances with a caller-supplied increment `xi` (already scaled by
    /// `√dt`).
    pub fn step_with_increment(&mut self, state: &mut PathState, xi: &[f64]) -> Result<()> {
        let p = &self.cfg.params;
        let sigma = p.sigma;
        let dt = self.cfg.dt;
        let u = state.u.values();
        let n = u.len();
        for i in 1..n - 1 {
            let ui = u[i];
            self.rhs[i - 1] = ui + dt * p.f(ui) + sigma * p.g(ui) * xi[i];
        }
        self.rhs[0] += self.r;
        self.lu.solve_in_place(&mut self.rhs);
        let t = state.t + dt;
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t });
        }
        let mut next = Vec::with_capacity(n);
        next.push(1.0);
        next.extend_from_slice(&self.rhs);
        next.push(0.0);
        state.u = GridFunction::new(*state.u.grid(), next)?;
        state.t = t;
        Ok(())
    }

    /// Draws the next increment from `stream` (none when `σ = 0`) and
    /// advances; returns the increment.
    pub fn step(&mut self, state: &mut PathState, stream: &mut NoiseStream) -> Result<&[f64]> {
        let mut xi = std::mem::take(&mut self.xi);
        if self.cfg.params.sigma > 0.0 {
            stream.next_into(self.cfg.dt, &mut xi);
            state.increments_consumed += 1;
        } else {
            xi.iter_mut().for_each(|v| *v = 0.0);
        }
        let res = self.step_with_increment(state, &xi);
        self.xi = xi;
        res.map(|_| self.xi.as_slice())
    }
}

/// One step on a copy of `state`; returns the new state and the increment.
pub fn step(
    state: &PathState,
    cfg: &SimConfig,
    stream: &mut NoiseStream,
) -> Result<(PathState, GridFunction)> {
    let mut stepper = Stepper::new(cfg)?;
    let mut next = state.clone();
    let xi = stepper.step(&mut next, stream)?.to_vec();
    Ok((next, GridFunction::new(cfg.grid, xi)?))
}

/// Iterates until `t_end` or until an observer breaks.
pub fn run_path(
    cfg: &SimConfig,
    mut state: PathState,
    stream: &mut NoiseStream,
    observers: &mut [&mut dyn Observer],
) -> Result<PathState> {
    cfg.grid.ensure_same(state.u.grid())?;
    let mut stepper = Stepper::new(cfg)?;
    let t0 = state.t;
    for k in 0..cfg.n_steps() {
        let xi = stepper.step(&mut state, stream)?;
        state.t = t0 + (k + 1) as f64 * cfg.dt;
        let mut stop = false;
        for obs in observers.iter_mut() {
            if obs.observe(&state, xi)?.is_break() {
                stop = true;
            }
        }
        if stop {
            break;
        }
    }
    Ok(state)
}

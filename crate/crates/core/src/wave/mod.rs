//! Deterministic traveling fronts `ρΦ'' + cΦ' + f(Φ) = 0` and the spectral
//! objects of their linearisation.

mod newton;
mod params;
mod spectral;

pub(crate) use newton::{solve_front, FrontProblem, LocalJacobian, NewtonSettings, PhaseCondition};
pub use params::NagumoParams;
pub use spectral::{
    apply_projection_complement, compute_spectral_data, semigroup_bound_estimate, semigroup_step,
    Linearization, Semigroup, SpectralData,
};

use crate::error::Result;
use crate::grid::{derivative, GridFunction, GridSpec};

/// Residual tolerance of the deterministic front solve.
pub const WAVE_TOLERANCE: f64 = 1e-10;

/// A front `Φ` connecting 1 at `-L` to 0 at `+L`, its speed and its
/// derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveProfile {
    pub profile: GridFunction,
    pub speed: f64,
    pub derivative: GridFunction,
    /// Sup-norm residual after each Newton iterate.
    pub residual_history: Vec<f64>,
}

impl WaveProfile {
    pub fn grid(&self) -> &GridSpec {
        self.profile.grid()
    }

    pub fn from_parts(profile: GridFunction, speed: f64) -> Self {
        let derivative = derivative(&profile);
        Self {
            profile,
            speed,
            derivative,
            residual_history: Vec::new(),
        }
    }
}

/// `ρΦ'' + cΦ' + f(Φ)` at interior nodes with Dirichlet ends.
pub(crate) fn front_residual(p: &NagumoParams, grid: &GridSpec, phi: &[f64], c: f64) -> Vec<f64> {
    let n = phi.len();
    let dx = grid.dx();
    let d2 = p.rho / (dx * dx);
    let d1 = c / (2.0 * dx);
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = d2 * (phi[i - 1] - 2.0 * phi[i] + phi[i + 1])
            + d1 * (phi[i + 1] - phi[i - 1])
            + p.f(phi[i]);
    }
    out
}

pub(crate) fn front_jacobian(
    p: &NagumoParams,
    grid: &GridSpec,
    phi: &[f64],
    c: f64,
) -> LocalJacobian {
    let n = phi.len();
    let m = n - 2;
    let dx = grid.dx();
    let d2 = p.rho / (dx * dx);
    let d1 = c / (2.0 * dx);
    LocalJacobian {
        sub: vec![d2 - d1; m],
        diag: (1..n - 1).map(|i| -2.0 * d2 + p.df(phi[i])).collect(),
        sup: vec![d2 + d1; m],
        dc: (1..n - 1)
            .map(|i| (phi[i + 1] - phi[i - 1]) / (2.0 * dx))
            .collect(),
    }
}

struct DeterministicFront<'a> {
    params: &'a NagumoParams,
    grid: &'a GridSpec,
}

impl FrontProblem for DeterministicFront<'_> {
    fn residual(&self, phi: &[f64], c: f64) -> Result<Vec<f64>> {
        Ok(front_residual(self.params, self.grid, phi, c))
    }

    fn jacobian(&self, phi: &[f64], c: f64) -> Result<LocalJacobian> {
        Ok(front_jacobian(self.params, self.grid, phi, c))
    }
}

/// Weights of `Φ(0)` by linear interpolation between the two nodes around 0.
fn pin_at_origin(grid: &GridSpec) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    let pos = grid.half_length() / grid.dx();
    let j = (pos.floor() as usize).min(n - 2);
    let t = pos - j as f64;
    w[j] = 1.0 - t;
    w[j + 1] += t;
    w
}

/// Solves the front equation by Newton's method with the speed as an
/// unknown and the translation pinned by `Φ(0) = 1/2`.
pub fn solve_deterministic_wave(
    params: &NagumoParams,
    grid: &GridSpec,
    init: Option<&WaveProfile>,
) -> Result<WaveProfile> {
    params.validate()?;
    let (mut phi, c) = match init {
        Some(w) => {
            w.grid().ensure_same(grid)?;
            (w.profile.values().to_vec(), w.speed)
        }
        None => (
            grid.coordinates()
                .into_iter()
                .map(|x| params.exact_front(x))
                .collect(),
            params.exact_speed(),
        ),
    };
    let n = grid.len();
    phi[0] = 1.0;
    phi[n - 1] = 0.0;
    let problem = DeterministicFront { params, grid };
    let phase = PhaseCondition {
        weights: pin_at_origin(grid),
        target: 0.5,
    };
    let outcome = solve_front(
        &problem,
        &phase,
        phi,
        c,
        &NewtonSettings {
            tol: WAVE_TOLERANCE,
            max_iter: 60,
        },
    )?;
    let profile = GridFunction::new(*grid, outcome.phi)?;
    let mut wave = WaveProfile::from_parts(profile, outcome.c);
    wave.residual_history = outcome.history;
    Ok(wave)
}

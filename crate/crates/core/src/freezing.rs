//! Stochastic freezing: the phase `Γ(t)` of a noisy front, the corrected
//! wave `(Φ_σ, c_σ)` and the perturbation `V(t) = U(· + Γ(t), t) - Φ_σ`.
//!
//! All pairings are taken against `ψ_Γ = ψ_tw(· - Γ)`; `D = ⟨∂_ξ U, ψ_Γ⟩`
//! is the common denominator.

use std::ops::ControlFlow;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    convolve_with_weights, derivative_values, gaussian_weights, norm_h1, norm_l2, shift,
    trapezoid_dot, GridFunction, GridSpec, ShiftStencil,
};
use crate::spde::{Observer, PathState};
use crate::wave::{
    front_residual, solve_front, FrontProblem, LocalJacobian, NagumoParams, NewtonSettings,
    PhaseCondition, SpectralData, WaveProfile,
};

/// Smallest admissible `|⟨∂_ξ U, ψ_Γ⟩|`, as a fraction of `⟨Φ₀', ψ_tw⟩ = 1`.
pub const DENOMINATOR_GUARD: f64 = 0.1;
/// Largest σ accepted by [`solve_stochastic_wave`].
pub const SIGMA_THRESHOLD: f64 = 0.5;
/// Residual tolerance of the stochastic wave solve.
pub const STOCHASTIC_WAVE_TOLERANCE: f64 = 1e-9;
/// Distance to the boundary (in kernel widths) at which tracking stops.
pub const BOUNDARY_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticWave {
    pub profile: GridFunction,
    pub speed: f64,
    pub sigma: f64,
    pub residual_history: Vec<f64>,
}

impl StochasticWave {
    pub fn grid(&self) -> &GridSpec {
        self.profile.grid()
    }

    /// The deterministic front viewed as the `σ = 0` member of the family.
    pub fn from_deterministic(wave: &WaveProfile) -> Self {
        Self {
            profile: wave.profile.clone(),
            speed: wave.speed,
            sigma: 0.0,
            residual_history: wave.residual_history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub gamma: f64,
    pub v: GridFunction,
    pub a_last: f64,
    pub b_hs_sq_last: f64,
    pub kappa_last: f64,
}

fn shifted_psi(spec: &SpectralData, gamma: f64) -> Result<Vec<f64>> {
    let psi = spec.psi_tw.values();
    if gamma == 0.0 {
        return Ok(psi.to_vec());
    }
    let mut out = vec![0.0; psi.len()];
    ShiftStencil::new(spec.grid(), -gamma)?.apply(psi, &mut out);
    Ok(out)
}

/// Pairing data of one `(U, Γ)`.
struct Pairings {
    denom: f64,
    hs: f64,
    /// `g(U)·Q[g(U)ψ_Γ]`
    gq: Vec<f64>,
}

fn pairings(p: &NagumoParams, grid: &GridSpec, weights: &[f64], u: &[f64], psi: &[f64]) -> Pairings {
    let du = derivative_values(grid, u);
    let denom = trapezoid_dot(grid, &du, psi);
    let gu: Vec<f64> = u.iter().map(|&v| p.g(v)).collect();
    let gpsi: Vec<f64> = gu.iter().zip(psi).map(|(g, s)| g * s).collect();
    let mut gq = vec![0.0; u.len()];
    convolve_with_weights(weights, &gpsi, &mut gq);
    gq.iter_mut().zip(&gu).for_each(|(q, g)| *q *= g);
    let hs = trapezoid_dot(grid, &gq, psi) / (denom * denom);
    Pairings { denom, hs, gq }
}

fn check_denominator(denom: f64) -> Result<()> {
    if denom.abs() >= DENOMINATOR_GUARD {
        Ok(())
    } else {
        Err(Error::WaveLost {
            pairing: denom,
            guard: DENOMINATOR_GUARD,
        })
    }
}

/// `K_σ` at interior nodes (zero at the two ends).
fn k_values(p: &NagumoParams, grid: &GridSpec, u: &[f64], c: f64, pr: &Pairings) -> Vec<f64> {
    let mut k = front_residual(p, grid, u, c);
    let s2 = p.sigma * p.sigma;
    if s2 > 0.0 {
        let n = u.len();
        let dx = grid.dx();
        let ito = 0.5 * s2 * pr.hs / (dx * dx);
        let drift = s2 / (pr.denom * 2.0 * dx);
        for i in 1..n - 1 {
            k[i] += ito * (u[i - 1] - 2.0 * u[i] + u[i + 1]) - drift * (pr.gq[i + 1] - pr.gq[i - 1]);
        }
    }
    k
}

/// `b̄(U, Γ)[w] = -⟨∂_ξ U, ψ_Γ⟩⁻¹ ⟨g(U) w, ψ_Γ⟩`.
pub fn b_bar_pairing(
    u: &GridFunction,
    gamma: f64,
    w: &GridFunction,
    spec: &SpectralData,
    p: &NagumoParams,
) -> Result<f64> {
    spec.grid().ensure_same(u.grid())?;
    spec.grid().ensure_same(w.grid())?;
    let grid = spec.grid();
    let psi = shifted_psi(spec, gamma)?;
    let denom = trapezoid_dot(grid, &derivative_values(grid, u.values()), &psi);
    check_denominator(denom)?;
    let gw: Vec<f64> = u.values().iter().zip(w.values()).map(|(&a, &b)| p.g(a) * b).collect();
    Ok(-trapezoid_dot(grid, &gw, &psi) / denom)
}

/// `‖b̄(U, Γ)‖²_HS = D⁻² ⟨g(U) Q[g(U) ψ_Γ], ψ_Γ⟩`.
pub fn b_bar_hs_norm_sq(u: &GridFunction, gamma: f64, spec: &SpectralData, p: &NagumoParams) -> Result<f64> {
    spec.grid().ensure_same(u.grid())?;
    let grid = spec.grid();
    let psi = shifted_psi(spec, gamma)?;
    let pr = pairings(p, grid, &gaussian_weights(grid), u.values(), &psi);
    if pr.gq.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    check_denominator(pr.denom)?;
    Ok(pr.hs)
}

/// `K_σ(Φ, Γ, c) = ρΦ'' + cΦ' + f(Φ) + ½σ²‖b̄‖²_HS Φ'' - σ² D⁻¹ (g(Φ) Q[g(Φ)ψ_Γ])'`.
pub fn k_sigma_residual(
    phi: &GridFunction,
    gamma: f64,
    c: f64,
    spec: &SpectralData,
    p: &NagumoParams,
) -> Result<GridFunction> {
    spec.grid().ensure_same(phi.grid())?;
    let grid = spec.grid();
    let psi = shifted_psi(spec, gamma)?;
    let pr = pairings(p, grid, &gaussian_weights(grid), phi.values(), &psi);
    if p.sigma > 0.0 {
        check_denominator(pr.denom)?;
    }
    GridFunction::new(*grid, k_values(p, grid, phi.values(), c, &pr))
}

struct StochasticFront<'a> {
    params: &'a NagumoParams,
    grid: &'a GridSpec,
    psi: &'a [f64],
    weights: Vec<f64>,
}

impl FrontProblem for StochasticFront<'_> {
    fn residual(&self, phi: &[f64], c: f64) -> Result<Vec<f64>> {
        let pr = pairings(self.params, self.grid, &self.weights, phi, self.psi);
        check_denominator(pr.denom)?;
        Ok(k_values(self.params, self.grid, phi, c, &pr))
    }

    /// Local part only: the scalars `D`, `‖b̄‖²_HS` and the convolution are
    /// frozen, which leaves an `O(σ²)` error in the Newton map.
    fn jacobian(&self, phi: &[f64], c: f64) -> Result<LocalJacobian> {
        let p = self.params;
        let n = phi.len();
        let dx = self.grid.dx();
        let pr = pairings(p, self.grid, &self.weights, phi, self.psi);
        check_denominator(pr.denom)?;
        let s2 = p.sigma * p.sigma;
        let mut q = vec![0.0; n];
        let gpsi: Vec<f64> = phi.iter().zip(self.psi).map(|(&u, s)| p.g(u) * s).collect();
        convolve_with_weights(&self.weights, &gpsi, &mut q);

        let d2 = (p.rho + 0.5 * s2 * pr.hs) / (dx * dx);
        let d1 = c / (2.0 * dx);
        let drift = s2 / (pr.denom * 2.0 * dx);
        let mut jac = LocalJacobian {
            sub: Vec::with_capacity(n - 2),
            diag: Vec::with_capacity(n - 2),
            sup: Vec::with_capacity(n - 2),
            dc: Vec::with_capacity(n - 2),
        };
        for i in 1..n - 1 {
            jac.sub.push(d2 - d1 + drift * p.dg(phi[i - 1]) * q[i - 1]);
            jac.diag.push(-2.0 * d2 + p.df(phi[i]));
            jac.sup.push(d2 + d1 - drift * p.dg(phi[i + 1]) * q[i + 1]);
            jac.dc.push((phi[i + 1] - phi[i - 1]) / (2.0 * dx));
        }
        Ok(jac)
    }
}

/// Solves `K_σ(Φ, 0, c) = 0` with `⟨Φ - Φ₀, ψ_tw⟩ = 0`, starting from
/// `(Φ₀, c₀)`.
pub fn solve_stochastic_wave(
    p: &NagumoParams,
    grid: &GridSpec,
    spec: &SpectralData,
    det_wave: &WaveProfile,
) -> Result<StochasticWave> {
    p.validate()?;
    grid.ensure_same(det_wave.grid())?;
    grid.ensure_same(spec.grid())?;
    if p.sigma > SIGMA_THRESHOLD {
        return Err(Error::InvalidParameter(format!(
            "sigma = {} exceeds the stochastic-wave threshold {SIGMA_THRESHOLD}",
            p.sigma
        )));
    }
    if p.sigma == 0.0 {
        return Ok(StochasticWave::from_deterministic(det_wave));
    }
    let psi = spec.psi_tw.values();
    let dx = grid.dx();
    let weights: Vec<f64> = (0..grid.len())
        .map(|i| psi[i] * grid.trapezoid_weight(i) * dx)
        .collect();
    let target = weights.iter().zip(det_wave.profile.values()).map(|(w, v)| w * v).sum();
    let problem = StochasticFront {
        params: p,
        grid,
        psi,
        weights: gaussian_weights(grid),
    };
    let outcome = solve_front(
        &problem,
        &PhaseCondition { weights, target },
        det_wave.profile.values().to_vec(),
        det_wave.speed,
        &NewtonSettings {
            tol: STOCHASTIC_WAVE_TOLERANCE,
            max_iter: 100,
        },
    )?;
    Ok(StochasticWave {
        profile: GridFunction::new(*grid, outcome.phi)?,
        speed: outcome.c,
        sigma: p.sigma,
        residual_history: outcome.history,
    })
}

/// `ā_σ(U, Γ) = -D⁻¹ ⟨K_σ(U, Γ, c_σ), ψ_Γ⟩`.
pub fn a_sigma(
    u: &GridFunction,
    gamma: f64,
    sw: &StochasticWave,
    spec: &SpectralData,
    p: &NagumoParams,
) -> Result<f64> {
    spec.grid().ensure_same(u.grid())?;
    let grid = spec.grid();
    let psi = shifted_psi(spec, gamma)?;
    let pr = pairings(p, grid, &gaussian_weights(grid), u.values(), &psi);
    check_denominator(pr.denom)?;
    let k = k_values(p, grid, u.values(), sw.speed, &pr);
    Ok(-trapezoid_dot(grid, &k, &psi) / pr.denom)
}

/// `κ_σ = 1 + σ²/(2ρ) ‖b̄(U, Γ)‖²_HS`.
pub fn kappa_sigma(u: &GridFunction, gamma: f64, spec: &SpectralData, p: &NagumoParams) -> Result<f64> {
    if p.sigma == 0.0 {
        return Ok(1.0);
    }
    let hs = b_bar_hs_norm_sq(u, gamma, spec, p)?;
    Ok(1.0 + p.sigma * p.sigma / (2.0 * p.rho) * hs)
}

/// Γ(0) with `⟨u0(· + Γ) - Φ_σ, ψ_tw⟩ = 0`, by a bracketed secant
/// (Illinois) iteration.
pub fn initial_phase(u0: &GridFunction, sw: &StochasticWave, spec: &SpectralData) -> Result<f64> {
    spec.grid().ensure_same(u0.grid())?;
    spec.grid().ensure_same(sw.grid())?;
    let grid = spec.grid();
    let psi = spec.psi_tw.values();
    let base = trapezoid_dot(grid, sw.profile.values(), psi);
    let h = |gamma: f64| -> Result<f64> {
        let moved = shift(u0, gamma)?;
        Ok(trapezoid_dot(grid, moved.values(), psi) - base)
    };
    let limit = 0.25 * grid.half_length();
    let h0 = h(0.0)?;
    if h0.abs() <= 1e-12 {
        return Ok(0.0);
    }
    // expand symmetrically until the sign changes
    let step = 0.25f64.min(limit / 4.0);
    let (mut a, mut fa, mut b, mut fb) = (0.0, h0, f64::NAN, f64::NAN);
    let mut k = 1;
    while (k as f64) * step < limit {
        let r = k as f64 * step;
        let mut found = false;
        for g in [r, -r] {
            let fg = h(g)?;
            if fg.signum() != h0.signum() {
                let prev = g - g.signum() * step;
                a = prev;
                fa = h(prev)?;
                b = g;
                fb = fg;
                found = true;
                break;
            }
        }
        if found {
            break;
        }
        k += 1;
    }
    if !b.is_finite() {
        return Err(Error::NoBracket { limit });
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = h(c)?;
        if fc.abs() <= 1e-10 * 0.5 || (b - a).abs() < 1e-15 {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NoBracket { limit })
}

/// Phase-tracking context shared by all paths on one grid.
#[derive(Debug, Clone)]
pub struct Freezer<'a> {
    pub sw: &'a StochasticWave,
    pub spec: &'a SpectralData,
    pub params: NagumoParams,
    weights: Vec<f64>,
}

impl<'a> Freezer<'a> {
    pub fn new(sw: &'a StochasticWave, spec: &'a SpectralData, params: &NagumoParams) -> Result<Self> {
        spec.grid().ensure_same(sw.grid())?;
        Ok(Self {
            sw,
            spec,
            params: *params,
            weights: gaussian_weights(spec.grid()),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.spec.grid()
    }

    /// `V = u(· + Γ) - Φ_σ`.
    pub fn perturbation(&self, u: &GridFunction, gamma: f64) -> Result<GridFunction> {
        shift(u, gamma)?.sub(&self.sw.profile)
    }

    /// Initial phase and perturbation for `u0`.
    pub fn start(&self, u0: &GridFunction) -> Result<PhaseState> {
        let gamma = initial_phase(u0, self.sw, self.spec)?;
        let v = self.perturbation(u0, gamma)?;
        Ok(PhaseState {
            gamma,
            v,
            a_last: 0.0,
            b_hs_sq_last: 0.0,
            kappa_last: 1.0,
        })
    }

    fn check_position(&self, gamma: f64) -> Result<()> {
        let l = self.grid().half_length();
        let margin = BOUNDARY_MARGIN.max(0.5 * l);
        if !gamma.is_finite() || gamma.abs() > l - margin {
            return Err(Error::FrontNearBoundary {
                position: gamma,
                margin,
            });
        }
        Ok(())
    }

    /// Euler–Maruyama step of the phase SDE. Coefficients are evaluated at
    /// the pre-step solution `u_prev`; `xi` is the increment the SPDE step
    /// consumed to reach `u_next`.
    pub fn phase_step(
        &self,
        ps: &PhaseState,
        u_prev: &GridFunction,
        u_next: &GridFunction,
        xi: &[f64],
        dt: f64,
    ) -> Result<PhaseState> {
        let p = &self.params;
        let grid = self.grid();
        let psi = shifted_psi(self.spec, ps.gamma)?;
        let u = u_prev.values();
        let pr = pairings(p, grid, &self.weights, u, &psi);
        check_denominator(pr.denom)?;
        let k = k_values(p, grid, u, self.sw.speed, &pr);
        let a = -trapezoid_dot(grid, &k, &psi) / pr.denom;
        let mut gamma = ps.gamma + (self.sw.speed + a) * dt;
        if p.sigma > 0.0 {
            let gxi: Vec<f64> = u.iter().zip(xi).map(|(&v, &x)| p.g(v) * x).collect();
            let b = -trapezoid_dot(grid, &gxi, &psi) / pr.denom;
            gamma += p.sigma * b;
        }
        self.check_position(gamma)?;
        let v = self.perturbation(u_next, gamma)?;
        Ok(PhaseState {
            gamma,
            v,
            a_last: a,
            b_hs_sq_last: pr.hs,
            kappa_last: 1.0 + p.sigma * p.sigma / (2.0 * p.rho) * pr.hs,
        })
    }
}

/// Module-level form of [`Freezer::phase_step`].
pub fn phase_step(
    ps: &PhaseState,
    u_prev: &GridFunction,
    u_next: &GridFunction,
    xi: &GridFunction,
    dt: f64,
    sw: &StochasticWave,
    spec: &SpectralData,
    p: &NagumoParams,
) -> Result<PhaseState> {
    Freezer::new(sw, spec, p)?.phase_step(ps, u_prev, u_next, xi.values(), dt)
}

/// Per-step diagnostic record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub t: f64,
    pub gamma: f64,
    pub v_l2: f64,
    pub v_h1: f64,
    pub a_sigma: f64,
    pub b_hs_sq: f64,
    pub kappa: f64,
}

impl PhaseRecord {
    pub fn new(t: f64, ps: &PhaseState) -> Self {
        Self {
            t,
            gamma: ps.gamma,
            v_l2: norm_l2(&ps.v),
            v_h1: norm_h1(&ps.v),
            a_sigma: ps.a_last,
            b_hs_sq: ps.b_hs_sq_last,
            kappa: ps.kappa_last,
        }
    }
}

/// Observer that advances the phase alongside the SPDE and hands every new
/// phase state to `sink`.
pub struct PhaseTracker<'a, F> {
    freezer: &'a Freezer<'a>,
    dt: f64,
    prev: GridFunction,
    pub state: PhaseState,
    sink: F,
}

impl<'a, F> PhaseTracker<'a, F>
where
    F: FnMut(f64, &PhaseState) -> Result<ControlFlow<()>>,
{
    pub fn new(freezer: &'a Freezer<'a>, u0: &GridFunction, dt: f64, sink: F) -> Result<Self> {
        Ok(Self {
            state: freezer.start(u0)?,
            prev: u0.clone(),
            dt,
            freezer,
            sink,
        })
    }
}

impl<F> Observer for PhaseTracker<'_, F>
where
    F: FnMut(f64, &PhaseState) -> Result<ControlFlow<()>>,
{
    fn observe(&mut self, state: &PathState, xi: &[f64]) -> Result<ControlFlow<()>> {
        self.state = self
            .freezer
            .phase_step(&self.state, &self.prev, &state.u, xi, self.dt)?;
        self.prev.clone_from(&state.u);
        (self.sink)(state.t, &self.state)
    }
}

//! Chaining toolkit: the Ornstein–Uhlenbeck increment metric, covering
//! numbers and Dudley entropy integrals, moment/tail converters, and
//! empirical `ln T` growth of running suprema.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::noise::{path_stream, NoiseSampler, NoiseStream};
use crate::stats::{linear_fit, mean_and_variance, LinearFit};
use crate::wave::{compute_spectral_data, solve_deterministic_wave, NagumoParams, Semigroup};

type Evaluator = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A pseudo-metric `d(t, s)` on `[0, T]`.
#[derive(Clone)]
pub struct IncrementMetric {
    evaluator: Evaluator,
    horizon: f64,
    d_max: f64,
}

impl fmt::Debug for IncrementMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncrementMetric")
            .field("horizon", &self.horizon)
            .field("d_max", &self.d_max)
            .finish_non_exhaustive()
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("horizon must be positive, got {t}")))
    }
}

impl IncrementMetric {
    /// Wraps an arbitrary evaluator; the diameter is estimated on a grid of
    /// pairs and refined along `s = T`.
    pub fn new(horizon: f64, evaluator: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        check_horizon(horizon)?;
        let m = 256;
        let mut d_max: f64 = 0.0;
        for i in 0..=m {
            for j in 0..i {
                let (t, s) = (horizon * i as f64 / m as f64, horizon * j as f64 / m as f64);
                d_max = d_max.max(evaluator(t, s));
            }
        }
        let fine = 4096;
        for j in 0..=fine {
            d_max = d_max.max(evaluator(horizon, horizon * j as f64 / fine as f64));
        }
        Ok(Self {
            evaluator: Arc::new(evaluator),
            horizon,
            d_max,
        })
    }

    /// The exact OU metric of [`ou_exact_metric`].
    pub fn ou(horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        let d_max = golden_max(|t| ou_exact_metric(t, horizon), 0.0, horizon);
        Ok(Self {
            evaluator: Arc::new(ou_exact_metric),
            horizon,
            d_max: d_max.max(ou_exact_metric(0.0, horizon)),
        })
    }

    /// `d(t, s) = d_max·min{√|t-s|, 1}`.
    pub fn sqrt_capped(horizon: f64, d_max: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if !(d_max > 0.0 && d_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("d_max must be positive, got {d_max}")));
        }
        Ok(Self {
            evaluator: Arc::new(move |t: f64, s: f64| d_max * (t - s).abs().sqrt().min(1.0)),
            horizon,
            d_max,
        })
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        (self.evaluator)(t, s)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Same evaluator on another horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let f = self.evaluator.clone();
        IncrementMetric::new(horizon, move |t, s| f(t, s))
    }

    /// Samples `r ↦ d(t, t + r)` and fails on the first decrease.
    pub fn check_monotone(&self) -> Result<()> {
        let (starts, offsets) = (17, 64);
        for i in 0..starts {
            let t = self.horizon * i as f64 / starts as f64;
            let span = self.horizon - t;
            let mut prev = 0.0;
            for j in 1..=offsets {
                let s = t + span * j as f64 / offsets as f64;
                let d = self.eval(t, s);
                if d < prev - 1e-12 * self.d_max.max(1.0) {
                    return Err(Error::NonMonotoneMetric { start: t, t: s });
                }
                prev = d;
            }
        }
        Ok(())
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}

/// `√E(X(t) - X(s))²` for the OU process `dX = -X dt + dW`, `X(0) = 0`.
pub fn ou_exact_metric(t: f64, s: f64) -> f64 {
    let (u, r) = (t.min(s), (t - s).abs());
    let decay = -(-r).exp_m1();
    let d2 = -0.5 * (-2.0 * u).exp_m1() * decay * decay - 0.5 * (-2.0 * r).exp_m1();
    d2.max(0.0).sqrt()
}

/// Exact OU transitions on `[0, T]` with step `dt`, starting from 0.
/// Returns `X(k·dt)` for `k = 0..=⌈T/dt⌉`.
pub fn simulate_ou<R: Rng + ?Sized>(horizon: f64, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_horizon(horizon)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let n = (horizon / dt - 1e-9).ceil() as usize;
    let decay = (-dt).exp();
    let sd = (0.5 * (1.0 - (-2.0 * dt).exp())).sqrt();
    let mut out = Vec::with_capacity(n + 1);
    let mut x = 0.0;
    out.push(x);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        x = decay * x + sd * z;
        out.push(x);
    }
    Ok(out)
}

/// Greedy left-to-right cover of `[0, T]` by intervals `[a, b]` with
/// `d(a, b) ≤ ν`. Exact for metrics increasing in `|t - s|`.
pub fn covering_number(metric: &IncrementMetric, nu: f64) -> Result<u64> {
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
    }
    if nu >= metric.d_max {
        return Ok(1);
    }
    metric.check_monotone()?;
    let horizon = metric.horizon;
    let mut start = 0.0;
    let mut count = 0u64;
    loop {
        count += 1;
        if metric.eval(start, horizon) <= nu {
            return Ok(count);
        }
        let (mut lo, mut hi) = (start, horizon);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if metric.eval(start, mid) <= nu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= start {
            return Err(Error::InvalidParameter(format!(
                "covering stalled at t = {start} for nu = {nu}"
            )));
        }
        start = lo;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DudleyOptions {
    /// Lower end of the numerical range as a fraction of `d_max`.
    pub nu_min_fraction: f64,
    /// Relative to `(d_max - ν_min)·√ln N(ν_min)`.
    pub tolerance: f64,
    /// Bisection depth; the integrand is a step function, so refinement
    /// stops at this depth instead of resolving every jump.
    pub max_depth: u32,
}

impl Default for DudleyOptions {
    fn default() -> Self {
        Self {
            nu_min_fraction: 0.1,
            tolerance: 1e-6,
            max_depth: 12,
        }
    }
}

/// `∫₀^∞ √ln N(T, d, ν) dν` with default options.
pub fn dudley_integral(metric: &IncrementMetric) -> Result<f64> {
    dudley_integral_with(metric, DudleyOptions::default())
}

/// Adaptive Simpson on `[ν_min, d_max]`. Below `ν_min` the covering number
/// is extrapolated as `N(ν_min)(ν_min/ν)²`, whose integral is closed form.
pub fn dudley_integral_with(metric: &IncrementMetric, opts: DudleyOptions) -> Result<f64> {
    let d_max = metric.d_max;
    if d_max <= 0.0 {
        return Ok(0.0);
    }
    let nu_min = opts.nu_min_fraction * d_max;
    let f = |nu: f64| -> Result<f64> { Ok((covering_number(metric, nu)? as f64).ln().sqrt()) };
    // Evaluate just below d_max: at ν = d_max the cover is a single interval.
    let top = d_max * (1.0 - 1e-12);
    let (fa, fm, fb) = (f(nu_min)?, f(0.5 * (nu_min + top))?, f(top)?);
    let whole = (top - nu_min) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = opts.tolerance * (top - nu_min) * fa.max(f64::MIN_POSITIVE);
    let mut budget = 1usize << (opts.max_depth + 2).min(40);
    let body = simpson(&f, nu_min, top, fa, fm, fb, whole, tol, opts.max_depth, &mut budget)?;
    Ok(body + power_law_tail(nu_min, fa * fa))
}

/// `∫₀^{ν₀} √(a + 2 ln(ν₀/ν)) dν`.
fn power_law_tail(nu0: f64, a: f64) -> f64 {
    nu0 * (a.sqrt() + (std::f64::consts::PI / 2.0).sqrt() * (0.5 * a).exp() * erfc((0.5 * a).sqrt()))
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    *budget = budget
        .checked_sub(2)
        .ok_or_else(|| Error::QuadratureFailed(tol))?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    Ok(simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget)?
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget)?)
}

/// Closed form of `∫₀^{d_max} √ln(T d_max²/ν²) dν`
/// `= d_max(√ln T + √(π/2)·√T·erfc(√(ln T / 2)))`.
pub fn dudley_sqrt_capped_closed_form(horizon: f64, d_max: f64) -> f64 {
    let l = horizon.ln();
    d_max * (l.sqrt() + (std::f64::consts::PI / 2.0).sqrt() * horizon.sqrt() * erfc((0.5 * l).sqrt()))
}

/// `2 exp(-ϑ²/(2eΘ²))`: tail bound under `E[Z^{2p}] ≤ p^p Θ^{2p}`.
pub fn moment_to_tail(theta: f64, vartheta: f64) -> f64 {
    2.0 * (-vartheta * vartheta / (2.0 * std::f64::consts::E * theta * theta)).exp()
}

/// `(p^p + ln(A)^p)(8eΘ²)^p`: moment bound under the tail
/// `P(Z > ϑ) ≤ 2A exp(-ϑ²/(2eΘ²))`.
pub fn tail_to_moment(a: f64, theta: f64, p: u32) -> Result<f64> {
    if !(a >= 2.0) {
        return Err(Error::InvalidParameter(format!("A must be at least 2, got {a}")));
    }
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    let pf = p as f64;
    Ok((pf.powf(pf) + a.ln().powf(pf)) * (8.0 * std::f64::consts::E * theta * theta).powf(pf))
}

/// Bound on `E max_{i ≤ N} Y_i^{2p}` for `N` variables with
/// `E[Y_i^{2p}] ≤ p^p Θ^{2p}`.
pub fn max_moment_bound(n: u64, theta: f64, p: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N must be at least 2, got {n}")));
    }
    tail_to_moment(n as f64, theta, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthProcess {
    ScalarOu,
    SemigroupConvolution,
}

/// Discretisation of the convolution experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionSetup {
    pub params: NagumoParams,
    pub grid: GridSpec,
    pub pad_factor: usize,
}

impl Default for ConvolutionSetup {
    fn default() -> Self {
        Self {
            params: NagumoParams::default(),
            grid: GridSpec::new(20.0, 256).expect("valid grid"),
            pad_factor: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthExperimentConfig {
    pub horizons: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub process: GrowthProcess,
    #[serde(default)]
    pub convolution: ConvolutionSetup,
}

pub const MIN_GROWTH_PATHS: usize = 100;

impl GrowthExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.horizons.iter().any(|t| !(*t >= 2.0 && t.is_finite())) {
            return bad(format!("horizons must be finite and at least 2: {:?}", self.horizons));
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("horizons must be strictly increasing: {:?}", self.horizons));
        }
        if self.horizons.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "need at least 3 distinct horizons, got {:?}",
                self.horizons
            )));
        }
        if self.n_paths < MIN_GROWTH_PATHS {
            return bad(format!("n_paths must be at least {MIN_GROWTH_PATHS}, got {}", self.n_paths));
        }
        if !(self.dt > 0.0 && self.dt.is_finite() && self.dt < self.horizons[0]) {
            return bad(format!("dt must be positive and below the first horizon, got {}", self.dt));
        }
        if self.process == GrowthProcess::SemigroupConvolution {
            self.convolution.params.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub horizon: f64,
    pub mean_sup_sq: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub process: GrowthProcess,
    pub n_paths: usize,
    pub rows: Vec<GrowthRow>,
    /// `E sup ‖X‖² ≈ α ln T + γ`.
    pub log_fit: LinearFit,
    pub linear_fit: LinearFit,
    pub log_preferred: bool,
}

/// Estimates `E sup_{[0,T]} ‖X‖²` for each horizon from shared paths (each
/// path runs to the largest horizon) and compares `ln T` and `T` fits.
pub fn sup_growth_experiment(cfg: &GrowthExperimentConfig) -> Result<GrowthReport> {
    cfg.validate()?;
    let sups: Vec<Vec<f64>> = match cfg.process {
        GrowthProcess::ScalarOu => (0..cfg.n_paths as u64)
            .into_par_iter()
            .map(|i| ou_running_sups(cfg, i))
            .collect::<Result<_>>()?,
        GrowthProcess::SemigroupConvolution => {
            let conv = ConvolutionRunner::new(cfg)?;
            (0..cfg.n_paths as u64)
                .into_par_iter()
                .map(|i| conv.running_sups(cfg, i))
                .collect::<Result<_>>()?
        }
    };
    let rows: Vec<GrowthRow> = cfg
        .horizons
        .iter()
        .enumerate()
        .map(|(k, &horizon)| {
            let column: Vec<f64> = sups.iter().map(|s| s[k]).collect();
            let (mean, var) = mean_and_variance(&column);
            GrowthRow {
                horizon,
                mean_sup_sq: mean,
                std_error: (var / column.len() as f64).sqrt(),
            }
        })
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_sup_sq).collect();
    let ln_t: Vec<f64> = cfg.horizons.iter().map(|t| t.ln()).collect();
    let log_fit = linear_fit(&ln_t, &y)?;
    let lin = linear_fit(&cfg.horizons, &y)?;
    Ok(GrowthReport {
        process: cfg.process,
        n_paths: cfg.n_paths,
        rows,
        log_preferred: log_fit.aic() < lin.aic(),
        log_fit,
        linear_fit: lin,
    })
}

/// Step indices at which each horizon ends.
fn horizon_steps(cfg: &GrowthExperimentConfig) -> Vec<usize> {
    cfg.horizons
        .iter()
        .map(|t| (t / cfg.dt - 1e-9).ceil() as usize)
        .collect()
}

fn ou_running_sups(cfg: &GrowthExperimentConfig, path: u64) -> Result<Vec<f64>> {
    let mut rng = path_stream(cfg.seed, path);
    let last = *cfg.horizons.last().expect("validated");
    let xs = simulate_ou(last, cfg.dt, &mut rng)?;
    let mut out = Vec::with_capacity(cfg.horizons.len());
    let mut sup: f64 = 0.0;
    let mut k0 = 0;
    for end in horizon_steps(cfg) {
        for x in &xs[k0..=end] {
            sup = sup.max(x * x);
        }
        k0 = end + 1;
        out.push(sup);
    }
    Ok(out)
}

/// `Y_{k+1} = Π(S(dt)Y_k + Π(g(Φ₀)ξ_k))` with `S` the Crank–Nicolson
/// propagator of the linearisation about the front.
struct ConvolutionRunner {
    semigroup: Semigroup,
    sampler: Arc<NoiseSampler>,
    multiplier: Vec<f64>,
    /// Pairing weights `ψ_i·w_i·dx` and neutral direction `Φ'`.
    pairing: Vec<f64>,
    neutral: Vec<f64>,
    weights: Vec<f64>,
}

impl ConvolutionRunner {
    fn new(cfg: &GrowthExperimentConfig) -> Result<Self> {
        let setup = cfg.convolution;
        let p = setup.params.with_sigma(0.0)?;
        let grid = setup.grid;
        let wave = solve_deterministic_wave(&p, &grid, None)?;
        let spec = compute_spectral_data(&wave, &p)?;
        let dx = grid.dx();
        let weights: Vec<f64> = (0..grid.len()).map(|i| grid.trapezoid_weight(i) * dx).collect();
        Ok(Self {
            semigroup: Semigroup::new(&spec, cfg.dt)?,
            sampler: Arc::new(NoiseSampler::build(grid, setup.pad_factor)?),
            multiplier: wave.profile.values().iter().map(|&u| p.g(u)).collect(),
            pairing: spec.psi_tw.values().iter().zip(&weights).map(|(a, w)| a * w).collect(),
            neutral: wave.derivative.values().to_vec(),
            weights,
        })
    }

    fn project(&self, v: &mut [f64]) {
        let c: f64 = v.iter().zip(&self.pairing).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&self.neutral).for_each(|(a, b)| *a -= c * b);
    }

    fn running_sups(&self, cfg: &GrowthExperimentConfig, path: u64) -> Result<Vec<f64>> {
        let n = self.multiplier.len();
        let mut semigroup = self.semigroup.clone();
        let mut stream = NoiseStream::for_path(self.sampler.clone(), cfg.seed, path);
        let mut y = vec![0.0; n];
        let mut xi = vec![0.0; n];
        let mut out = Vec::with_capacity(cfg.horizons.len());
        let mut sup: f64 = 0.0;
        let mut k = 0;
        for end in horizon_steps(cfg) {
            while k < end {
                semigroup.step_in_place(&mut y);
                stream.next_into(cfg.dt, &mut xi);
                xi.iter_mut().zip(&self.multiplier).for_each(|(a, g)| *a *= g);
                self.project(&mut xi);
                y.iter_mut().zip(&xi).for_each(|(a, b)| *a += b);
                self.project(&mut y);
                let norm_sq: f64 = y.iter().zip(&self.weights).map(|(a, w)| a * a * w).sum();
                if !norm_sq.is_finite() {
                    return Err(Error::BlowUp { t: (k + 1) as f64 * cfg.dt });
                }
                sup = sup.max(norm_sq);
                k += 1;
            }
            out.push(sup);
        }
        Ok(out)
    }
}

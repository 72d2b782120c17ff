//! Uniform-grid function algebra on a truncated line `[-L, L]`.
//!
//! All quadratures are trapezoidal and all derivatives are second-order
//! finite differences, so every module that pairs, differentiates or
//! convolves grid functions sees one consistent discretisation.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest grid accepted anywhere in the crate.
pub const MIN_POINTS: usize = 16;

/// Radius beyond which `exp(-r^2)` is below `1e-17` and is dropped from
/// direct-sum convolutions.
pub const GAUSSIAN_CUTOFF: f64 = 6.26;

/// Uniform grid on `[-half_length, half_length]` with `points` nodes,
/// both end points included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridSpec {
    half_length: f64,
    points: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    half_length: f64,
    points: usize,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;

    fn try_from(r: RawGrid) -> Result<Self> {
        GridSpec::new(r.half_length, r.points)
    }
}

impl GridSpec {
    pub fn new(half_length: f64, points: usize) -> Result<Self> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half_length must be positive and finite, got {half_length}"
            )));
        }
        if points < MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_POINTS} points, got {points}"
            )));
        }
        Ok(Self {
            half_length,
            points,
        })
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_length / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.dx()
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.x(i)).collect()
    }

    /// Trapezoidal weight of node `i` (without the `dx` factor).
    #[inline]
    pub fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.points {
            0.5
        } else {
            1.0
        }
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[-{}, {}] x {}", self.half_length, self.half_length, self.points)
    }
}

/// Real function sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; for internal hot loops whose inputs are
    /// already validated.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self::from_raw(grid, vec![value; grid.len()])
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(grid, (0..grid.len()).map(|i| f(grid.x(i))).collect())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + alpha * b)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Trapezoidal `∫ u v dx` over raw slices sharing `grid`.
pub(crate) fn trapezoid_dot(grid: &GridSpec, u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let interior: f64 = u[1..n - 1]
        .iter()
        .zip(&v[1..n - 1])
        .map(|(a, b)| a * b)
        .sum();
    (interior + 0.5 * (u[0] * v[0] + u[n - 1] * v[n - 1])) * grid.dx()
}

pub fn inner_l2(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    u.grid.ensure_same(&v.grid)?;
    Ok(trapezoid_dot(&u.grid, &u.values, &v.values))
}

pub fn norm_l2(u: &GridFunction) -> f64 {
    trapezoid_dot(&u.grid, &u.values, &u.values).sqrt()
}

/// `sqrt(‖u‖² + ‖u'‖²)` with `u'` from [`derivative`].
pub fn norm_h1(u: &GridFunction) -> f64 {
    norm_h1_sq(u).sqrt()
}

pub fn norm_h1_sq(u: &GridFunction) -> f64 {
    let du = derivative_values(&u.grid, &u.values);
    trapezoid_dot(&u.grid, &u.values, &u.values) + trapezoid_dot(&u.grid, &du, &du)
}

pub(crate) fn derivative_values(grid: &GridSpec, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let inv = 1.0 / (2.0 * grid.dx());
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * inv;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) * inv;
    }
    out[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) * inv;
    out
}

pub(crate) fn second_derivative_values(grid: &GridSpec, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let inv = 1.0 / (grid.dx() * grid.dx());
    let mut out = vec![0.0; n];
    out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) * inv;
    for i in 1..n - 1 {
        out[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv;
    }
    out[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) * inv;
    out
}

/// Central differences in the interior, second-order one-sided stencils at
/// the two end points.
pub fn derivative(u: &GridFunction) -> GridFunction {
    GridFunction::from_raw(u.grid, derivative_values(&u.grid, &u.values))
}

pub fn second_derivative(u: &GridFunction) -> GridFunction {
    GridFunction::from_raw(u.grid, second_derivative_values(&u.grid, &u.values))
}

/// Precomputed four-point Lagrange stencil for a fixed translation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ShiftStencil {
    offset: isize,
    weights: [f64; 4],
}

impl ShiftStencil {
    pub(crate) fn new(grid: &GridSpec, delta: f64) -> Result<Self> {
        let limit = 0.5 * grid.half_length();
        if !delta.is_finite() || delta.abs() >= limit {
            return Err(Error::ShiftTooLarge { delta, limit });
        }
        let p = delta / grid.dx();
        let k = p.floor();
        let t = p - k;
        let weights = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        Ok(Self {
            offset: k as isize,
            weights,
        })
    }

    pub(crate) fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len() as isize;
        let last = n - 1;
        let at = |j: isize| u[j.clamp(0, last) as usize];
        for (i, o) in out.iter_mut().enumerate() {
            let base = i as isize + self.offset;
            // Past either end the function continues as its boundary value.
            if base < 0 {
                *o = u[0];
            } else if base >= last {
                *o = u[last as usize];
            } else {
                *o = self.weights[0] * at(base - 1)
                    + self.weights[1] * at(base)
                    + self.weights[2] * at(base + 1)
                    + self.weights[3] * at(base + 2);
            }
        }
    }
}

/// Returns `x ↦ u(x + delta)` by cubic interpolation.
pub fn shift(u: &GridFunction, delta: f64) -> Result<GridFunction> {
    let stencil = ShiftStencil::new(&u.grid, delta)?;
    let mut out = vec![0.0; u.len()];
    stencil.apply(&u.values, &mut out);
    Ok(GridFunction::from_raw(u.grid, out))
}

pub(crate) fn gaussian_weights(grid: &GridSpec) -> Vec<f64> {
    let dx = grid.dx();
    let reach = ((GAUSSIAN_CUTOFF / dx).ceil() as usize).min(grid.len() - 1);
    (0..=reach)
        .map(|k| {
            let r = k as f64 * dx;
            (-r * r).exp() * dx
        })
        .collect()
}

pub(crate) fn convolve_with_weights(weights: &[f64], u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let reach = weights.len() - 1;
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(n - 1);
        let mut acc = 0.0;
        for (j, &uj) in u.iter().enumerate().take(hi + 1).skip(lo) {
            acc += weights[i.abs_diff(j)] * uj;
        }
        *o = acc;
    }
}

/// `[Qu](x) = Σ_y exp(-(x-y)^2) u(y) dx`, summed directly over the part of
/// the kernel above `1e-17`.
pub fn convolve_gaussian(u: &GridFunction) -> GridFunction {
    let weights = gaussian_weights(&u.grid);
    let mut out = vec![0.0; u.len()];
    convolve_with_weights(&weights, &u.values, &mut out);
    GridFunction::from_raw(u.grid, out)
}

/// Same operator as [`convolve_gaussian`], evaluated with a zero-padded FFT
/// over the full kernel.
pub fn convolve_gaussian_fft(u: &GridFunction) -> GridFunction {
    let n = u.len();
    let m = (2 * n).next_power_of_two();
    let dx = u.grid.dx();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(m);
    let inverse = planner.plan_fft_inverse(m);

    let mut kernel = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        let r = k as f64 * dx;
        let w = (-r * r).exp() * dx;
        kernel[k].re = w;
        if k > 0 {
            kernel[m - k].re = w;
        }
    }
    let mut signal: Vec<Complex64> = u
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    forward.process(&mut kernel);
    forward.process(&mut signal);
    for (s, k) in signal.iter_mut().zip(&kernel) {
        *s *= k;
    }
    inverse.process(&mut signal);
    let norm = 1.0 / m as f64;
    GridFunction::from_raw(u.grid, signal[..n].iter().map(|c| c.re * norm).collect())
}

/// Shareable forward FFT plan.
#[derive(Clone)]
pub(crate) struct ForwardFft {
    pub plan: Arc<dyn rustfft::Fft<f64>>,
}

impl ForwardFft {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            plan: FftPlanner::<f64>::new().plan_fft_forward(len),
        }
    }
}

impl fmt::Debug for ForwardFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ForwardFft({})", self.plan.len())
    }
}

use crate::error::{Error, Result};
use crate::grid::{inner_l2, norm_l2, GridFunction, GridSpec};
use crate::linalg::{largest_eigenvalues, BandMatrix, Tridiagonal, TridiagonalLu};

use super::{NagumoParams, WaveProfile};

/// Finite-difference linearisation `ρv'' + c v' + Df(Φ) v` on the interior
/// nodes, with `v = 0` at both ends.
///
/// The reaction coefficient at node `i` is the divided difference of `f`
/// over `Φ_{i-1}, Φ_{i+1}`. It agrees with `f'(Φ_i)` to `O(dx²)` and makes
/// the discrete operator annihilate the central-difference derivative of
/// the discrete front, so the neutral mode is exact at the grid level.
#[derive(Debug, Clone)]
pub struct Linearization {
    grid: GridSpec,
    op: Tridiagonal,
}

impl Linearization {
    pub fn new(wave: &WaveProfile, params: &NagumoParams) -> Self {
        let grid = *wave.grid();
        let phi = wave.profile.values();
        let n = phi.len();
        let dx = grid.dx();
        let d2 = params.rho / (dx * dx);
        let d1 = wave.speed / (2.0 * dx);
        let diag = (1..n - 1)
            .map(|i| -2.0 * d2 + params.f_divided_difference(phi[i - 1], phi[i + 1]))
            .collect();
        let op = Tridiagonal::new(vec![d2 - d1; n - 3], diag, vec![d2 + d1; n - 3]);
        Self { grid, op }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn tridiagonal(&self) -> &Tridiagonal {
        &self.op
    }

    /// Applies the operator; the result vanishes at the two end nodes.
    pub fn apply(&self, v: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(v.grid())?;
        let vals = v.values();
        let n = vals.len();
        let mut inner = self.op.mul_vec(&vals[1..n - 1]);
        // boundary values of v enter the first and last rows
        inner[0] += self.op.sub[0] * vals[0];
        let m = inner.len();
        inner[m - 1] += self.op.sup[m - 2] * vals[n - 1];
        let mut out = Vec::with_capacity(n);
        out.push(0.0);
        out.extend(inner);
        out.push(0.0);
        GridFunction::new(self.grid, out)
    }

    /// Largest Gershgorin radius, a cheap bound on the operator norm.
    pub fn scale(&self) -> f64 {
        let t = &self.op;
        let n = t.size();
        (0..n)
            .map(|i| {
                t.diag[i].abs()
                    + if i > 0 { t.sub[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { t.sup[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }
}

/// Spectral companions of a deterministic front.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Adjoint eigenfunction normalised by `⟨Φ', ψ⟩ = 1`.
    pub psi_tw: GridFunction,
    /// Half of the gap between the neutral eigenvalue and the rest.
    pub beta: f64,
    pub neutral_eigenvalue: f64,
    pub second_eigenvalue: f64,
    pub linearization: Linearization,
}

impl SpectralData {
    pub fn grid(&self) -> &GridSpec {
        self.psi_tw.grid()
    }

    /// Eigenvector of the neutral eigenvalue by inverse iteration, unit L²
    /// norm, oriented like `Φ'`.
    pub fn neutral_mode(&self, wave: &WaveProfile) -> Result<GridFunction> {
        let t = self.linearization.tridiagonal();
        let (off, d) = t.symmetrize()?;
        let m = t.size();
        let shift = self.neutral_eigenvalue + 1e-9 * self.linearization.scale();
        let mut band = BandMatrix::zeros(m, 1, 1);
        for i in 0..m {
            band.set(i, i, t.diag[i] - shift);
            if i + 1 < m {
                band.set(i, i + 1, off[i]);
                band.set(i + 1, i, off[i]);
            }
        }
        let lu = band.factor()?;
        let dphi = wave.derivative.values();
        let mut y: Vec<f64> = (0..m).map(|i| d[i] * dphi[i + 1]).collect();
        for _ in 0..3 {
            lu.solve_in_place(&mut y);
            let s = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            y.iter_mut().for_each(|v| *v /= s);
        }
        let mut vals = vec![0.0; m + 2];
        for i in 0..m {
            vals[i + 1] = y[i] / d[i];
        }
        let mode = GridFunction::new(*self.grid(), vals)?;
        let norm = norm_l2(&mode);
        let sign = inner_l2(&mode, &wave.derivative)?.signum();
        Ok(mode.scale(sign / norm))
    }
}

pub fn compute_spectral_data(wave: &WaveProfile, params: &NagumoParams) -> Result<SpectralData> {
    params.validate()?;
    let grid = *wave.grid();
    let c = wave.speed;
    let raw = GridFunction::from_fn(grid, |x| (-c * x / params.rho).exp())
        .mul(&wave.derivative)?;
    let pairing = inner_l2(&wave.derivative, &raw)?;
    if !(pairing.abs() > 0.0) {
        return Err(Error::EigenFailed("front derivative pairs to zero".into()));
    }
    let psi_tw = raw.scale(1.0 / pairing);

    let linearization = Linearization::new(wave, params);
    let t = linearization.tridiagonal();
    let (off, _) = t.symmetrize()?;
    let top = largest_eigenvalues(&t.diag, &off, 2)?;
    let (neutral, second) = (top[0], top[1]);
    if second >= 0.0 {
        return Err(Error::NoSpectralGap(second));
    }
    Ok(SpectralData {
        psi_tw,
        beta: -second / 2.0,
        neutral_eigenvalue: neutral,
        second_eigenvalue: second,
        linearization,
    })
}

/// `Πv = v - ⟨v, ψ⟩ Φ'`.
pub fn apply_projection_complement(
    v: &GridFunction,
    spectral: &SpectralData,
    wave: &WaveProfile,
) -> Result<GridFunction> {
    let coef = inner_l2(v, &spectral.psi_tw)?;
    v.axpy(-coef, &wave.derivative)
}

/// Crank–Nicolson propagator of `∂_t v = L v` for a fixed step.
#[derive(Debug, Clone)]
pub struct Semigroup {
    grid: GridSpec,
    explicit: Tridiagonal,
    implicit: TridiagonalLu,
    scratch: Vec<f64>,
}

impl Semigroup {
    pub fn new(spectral: &SpectralData, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let op = spectral.linearization.tridiagonal();
        Ok(Self {
            grid: *spectral.grid(),
            explicit: op.shifted(1.0, 0.5 * dt),
            implicit: op.shifted(1.0, -0.5 * dt).factor()?,
            scratch: vec![0.0; op.size()],
        })
    }

    /// Advances `v` in place (boundary values are reset to zero).
    pub fn step_in_place(&mut self, v: &mut [f64]) {
        let n = v.len();
        self.explicit.mul_vec_into(&v[1..n - 1], &mut self.scratch);
        self.implicit.solve_in_place(&mut self.scratch);
        v[0] = 0.0;
        v[n - 1] = 0.0;
        v[1..n - 1].copy_from_slice(&self.scratch);
    }

    pub fn step(&mut self, v: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(v.grid())?;
        let mut vals = v.values().to_vec();
        self.step_in_place(&mut vals);
        GridFunction::new(self.grid, vals)
    }
}

/// One Crank–Nicolson step of length `dt`.
pub fn semigroup_step(
    v: &GridFunction,
    dt: f64,
    spectral: &SpectralData,
    wave: &WaveProfile,
    params: &NagumoParams,
) -> Result<GridFunction> {
    params.validate()?;
    wave.grid().ensure_same(v.grid())?;
    Semigroup::new(spectral, dt)?.step(v)
}

/// Empirical `sup_t ‖S(t)Πv‖ / ‖Πv‖` over a fixed family of localised test
/// functions. Diagnostic only: the semigroup constant has no closed form.
pub fn semigroup_bound_estimate(
    spectral: &SpectralData,
    wave: &WaveProfile,
    dt: f64,
    t_max: f64,
) -> Result<f64> {
    let grid = *spectral.grid();
    let mut sg = Semigroup::new(spectral, dt)?;
    let steps = (t_max / dt).ceil() as usize;
    let mut worst: f64 = 1.0;
    for k in 0..6 {
        let freq = 0.5 + 0.75 * k as f64;
        let offset = -3.0 + 1.2 * k as f64;
        let v = GridFunction::from_fn(grid, |x| {
            ((x - offset) * freq).cos() / ((x - offset) / 2.0).cosh()
        });
        let v = apply_projection_complement(&v, spectral, wave)?;
        let base = norm_l2(&v);
        let mut vals = v.into_values();
        for _ in 0..steps {
            sg.step_in_place(&mut vals);
            let cur = GridFunction::new(grid, vals.clone())?;
            worst = worst.max(norm_l2(&cur) / base);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::solve_deterministic_wave;

    fn setup(l: f64, n: usize) -> (NagumoParams, WaveProfile, SpectralData) {
        let p = NagumoParams::new(1.0, 0.25, 0.0).unwrap();
        let g = GridSpec::new(l, n).unwrap();
        let w = solve_deterministic_wave(&p, &g, None).unwrap();
        let s = compute_spectral_data(&w, &p).unwrap();
        (p, w, s)
    }

    fn smooth_bump(g: GridSpec, k: f64) -> GridFunction {
        GridFunction::from_fn(g, |x| (k * x + 0.3).sin() * (-(x - 1.0).powi(2) / 6.0).exp())
    }

    #[test]
    fn normalisation_and_gap() {
        let (_, w, s) = setup(40.0, 2048);
        assert!((inner_l2(&w.derivative, &s.psi_tw).unwrap() - 1.0).abs() < 1e-8);
        assert!(s.neutral_eigenvalue.abs() <= 1e-6, "{}", s.neutral_eigenvalue);
        assert!(s.second_eigenvalue < 0.0 && s.beta > 0.0);
        // essential spectrum edge of the truncated problem is -a - c²/4ρ
        assert!((s.second_eigenvalue + 0.283).abs() < 0.01, "{}", s.second_eigenvalue);
    }

    #[test]
    fn front_derivative_is_neutral() {
        let (_, w, s) = setup(40.0, 2048);
        let lv = s.linearization.apply(&w.derivative).unwrap();
        assert!(norm_l2(&lv) <= 1e-5 * norm_l2(&w.derivative), "{}", norm_l2(&lv));
    }

    #[test]
    fn neutral_mode_matches_derivative() {
        let (_, w, s) = setup(20.0, 512);
        let mode = s.neutral_mode(&w).unwrap();
        let reference = w.derivative.scale(1.0 / norm_l2(&w.derivative));
        assert!(mode.sub(&reference).unwrap().sup_norm() <= 1e-3);
    }

    #[test]
    fn projection_properties() {
        let (_, w, s) = setup(20.0, 512);
        let killed = apply_projection_complement(&w.derivative, &s, &w).unwrap();
        assert!(killed.sup_norm() < 1e-8);
        for k in [0.3, 1.1, 2.5] {
            let v = smooth_bump(*w.grid(), k);
            let pv = apply_projection_complement(&v, &s, &w).unwrap();
            let ppv = apply_projection_complement(&pv, &s, &w).unwrap();
            assert!(ppv.sub(&pv).unwrap().sup_norm() < 1e-10);
            assert!(inner_l2(&pv, &s.psi_tw).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn semigroup_preserves_neutral_mode_and_decays() {
        let (p, w, s) = setup(20.0, 512);
        let dx = w.grid().dx();
        let once = semigroup_step(&w.derivative, 0.1, &s, &w, &p).unwrap();
        assert!(once.sub(&w.derivative).unwrap().sup_norm() < dx * dx);

        let v = apply_projection_complement(&smooth_bump(*w.grid(), 0.8), &s, &w).unwrap();
        let mut sg = Semigroup::new(&s, 0.05).unwrap();
        let mut cur = v.clone();
        for _ in 0..100 {
            cur = sg.step(&cur).unwrap();
        }
        let ratio = norm_l2(&cur) / norm_l2(&v);
        assert!(ratio <= 1.0, "{ratio}");
        // decay is at least as fast as the computed gap allows, up to slack
        assert!(ratio <= 3.0 * (-2.0 * s.beta * 5.0).exp() + 0.5, "{ratio}");
    }

    #[test]
    fn tiny_step_is_consistent() {
        let (p, w, s) = setup(20.0, 512);
        let v = smooth_bump(*w.grid(), 1.3);
        let lv = s.linearization.apply(&v).unwrap();
        let stepped = semigroup_step(&v, 1e-8, &s, &w, &p).unwrap();
        let change = norm_l2(&stepped.sub(&v).unwrap());
        assert!(change <= 1e-6 * norm_l2(&lv));
    }

    #[test]
    fn bound_estimate_is_finite() {
        let (_, w, s) = setup(20.0, 256);
        let m = semigroup_bound_estimate(&s, &w, 0.05, 5.0).unwrap();
        assert!((1.0..10.0).contains(&m), "{m}");
    }
}

//! Q-Wiener increments with covariance `E[ξ(x)ξ(y)] = dt·exp(-(x-y)^2)`.
//!
//! Sampling uses circulant embedding: the kernel is laid out on a periodic
//! grid of `pad_factor·n` points, its discrete spectrum is computed once, and
//! each draw is one FFT of complex white noise. The real and imaginary parts
//! of that FFT are two independent fields; [`NoiseStream`] keeps the second
//! one for the next call.
//!
//! Convention: `Q` acts as `[Qv](x) = Σ_y exp(-(x-y)^2) v(y) dx`, so the
//! Hilbert–Schmidt norm of `w ↦ h·w` composed with `√Q` is `Σ h(x)^2 dx`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{convolve_gaussian, inner_l2, trapezoid_dot, ForwardFft, GridFunction, GridSpec};

/// Largest relative spectral mass that may be clipped to zero.
pub const CLIP_LIMIT: f64 = 1e-8;

/// Per-path random stream.
pub type RandomStream = ChaCha8Rng;

/// Independent stream number `path_index` of the generator seeded by
/// `master_seed`.
pub fn path_stream(master_seed: u64, path_index: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

#[derive(Debug, Clone)]
pub struct NoiseSampler {
    grid: GridSpec,
    pad_factor: usize,
    spectral_factor: Vec<f64>,
    clipped_mass: f64,
    fft: ForwardFft,
}

impl NoiseSampler {
    /// Circulant embedding of the Gaussian kernel `exp(-r^2)`.
    pub fn build(grid: GridSpec, pad_factor: usize) -> Result<Self> {
        Self::with_kernel(grid, pad_factor, |r| (-r * r).exp())
    }

    /// Circulant embedding of an arbitrary even stationary kernel.
    pub fn with_kernel(grid: GridSpec, pad_factor: usize, kernel: impl Fn(f64) -> f64) -> Result<Self> {
        if pad_factor < 2 {
            return Err(Error::InvalidParameter(format!(
                "pad_factor must be at least 2, got {pad_factor}"
            )));
        }
        let m = pad_factor * grid.len();
        let dx = grid.dx();
        let mut buf: Vec<Complex64> = (0..m)
            .map(|k| Complex64::new(kernel(k.min(m - k) as f64 * dx), 0.0))
            .collect();
        let fft = ForwardFft::new(m);
        fft.plan.process(&mut buf);

        let total: f64 = buf.iter().map(|c| c.re.abs()).sum();
        let negative: f64 = buf.iter().map(|c| (-c.re).max(0.0)).sum();
        let clipped_mass = if total > 0.0 { negative / total } else { 0.0 };
        if clipped_mass > CLIP_LIMIT {
            return Err(Error::EmbeddingClipped {
                clipped: clipped_mass,
                limit: CLIP_LIMIT,
            });
        }
        let spectral_factor = buf
            .iter()
            .map(|c| (c.re.max(0.0) / m as f64).sqrt())
            .collect();
        Ok(Self {
            grid,
            pad_factor,
            spectral_factor,
            clipped_mass,
            fft,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn spectral_factor(&self) -> &[f64] {
        &self.spectral_factor
    }

    /// Relative spectral mass removed by clipping negative eigenvalues.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Two independent unit-variance fields written into `first` and
    /// `second`; `buf` must have the embedding length.
    fn sample_pair_into<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        buf: &mut [Complex64],
        scratch: &mut [Complex64],
        first: &mut [f64],
        second: &mut [f64],
    ) {
        for (b, &s) in buf.iter_mut().zip(&self.spectral_factor) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *b = Complex64::new(s * re, s * im);
        }
        self.fft.plan.process_with_scratch(buf, scratch);
        for (i, c) in buf.iter().take(self.grid.len()).enumerate() {
            first[i] = c.re;
            second[i] = c.im;
        }
    }

    fn embedding_len(&self) -> usize {
        self.spectral_factor.len()
    }

    fn scratch_len(&self) -> usize {
        self.fft.plan.get_inplace_scratch_len()
    }

    /// One increment over a step `dt`, drawn afresh from `rng`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<GridFunction> {
        check_dt(dt)?;
        let n = self.grid.len();
        let mut buf = vec![Complex64::default(); self.embedding_len()];
        let mut scratch = vec![Complex64::default(); self.scratch_len()];
        let mut first = vec![0.0; n];
        let mut spare = vec![0.0; n];
        self.sample_pair_into(rng, &mut buf, &mut scratch, &mut first, &mut spare);
        let scale = dt.sqrt();
        first.iter_mut().for_each(|v| *v *= scale);
        Ok(GridFunction::from_raw(self.grid, first))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")))
    }
}

/// A path's private increment sequence. Every FFT yields two fields; the
/// second is cached so no randomness is discarded.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    sampler: Arc<NoiseSampler>,
    rng: RandomStream,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    spare: Vec<f64>,
    has_spare: bool,
    consumed: u64,
}

impl NoiseStream {
    pub fn new(sampler: Arc<NoiseSampler>, rng: RandomStream) -> Self {
        let n = sampler.grid.len();
        Self {
            buf: vec![Complex64::default(); sampler.embedding_len()],
            scratch: vec![Complex64::default(); sampler.scratch_len()],
            spare: vec![0.0; n],
            has_spare: false,
            consumed: 0,
            sampler,
            rng,
        }
    }

    pub fn for_path(sampler: Arc<NoiseSampler>, master_seed: u64, path_index: u64) -> Self {
        Self::new(sampler, path_stream(master_seed, path_index))
    }

    pub fn sampler(&self) -> &NoiseSampler {
        &self.sampler
    }

    /// Number of increments handed out so far.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    /// Writes the next increment for a step `dt` into `out`.
    pub fn next_into(&mut self, dt: f64, out: &mut [f64]) {
        if self.has_spare {
            out.copy_from_slice(&self.spare);
            self.has_spare = false;
        } else {
            self.sampler.sample_pair_into(
                &mut self.rng,
                &mut self.buf,
                &mut self.scratch,
                out,
                &mut self.spare,
            );
            self.has_spare = true;
        }
        let scale = dt.sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
        self.consumed += 1;
    }

    pub fn next_increment(&mut self, dt: f64) -> Result<GridFunction> {
        check_dt(dt)?;
        let mut out = vec![0.0; self.sampler.grid.len()];
        self.next_into(dt, &mut out);
        Ok(GridFunction::from_raw(self.sampler.grid, out))
    }
}

/// `‖w ↦ h·√Q w‖²_HS = Σ h(x)^2 q(0) dx` with `q(0) = 1`.
pub fn hs_norm_sq_of_multiplier(h: &GridFunction, sampler: &NoiseSampler) -> Result<f64> {
    sampler.grid.ensure_same(h.grid())?;
    Ok(trapezoid_dot(h.grid(), h.values(), h.values()))
}

/// HS norm squared of the rank-one functional `w ↦ ⟨h·√Q w, ψ⟩`, that is
/// `⟨h·Q(h·ψ), ψ⟩`.
pub fn hs_norm_sq_rank_one(h: &GridFunction, psi: &GridFunction) -> Result<f64> {
    let hpsi = h.mul(psi)?;
    inner_l2(&h.mul(&convolve_gaussian(&hpsi))?, psi)
}

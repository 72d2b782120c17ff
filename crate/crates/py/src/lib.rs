//! Python bindings: `import nagumo`.
//!
//! Fronts and spectral data are classes; ensembles and growth experiments
//! return plain dicts (the JSON form of the Rust reports).

use std::ops::ControlFlow;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use nagumo_core::chaining::{
    self, ConvolutionSetup, GrowthExperimentConfig, GrowthProcess, IncrementMetric,
};
use nagumo_core::exit_stats::{self, ExitConfig};
use nagumo_core::freezing::{solve_stochastic_wave, Freezer, PhaseRecord, PhaseTracker};
use nagumo_core::grid::{self as core_grid, GridFunction, GridSpec};
use nagumo_core::noise::{NoiseSampler, NoiseStream};
use nagumo_core::spde::{initial_condition, run_path, InitialCondition, Scheme, SimConfig};
use nagumo_core::wave::{self, NagumoParams, SpectralData, WaveProfile};
use nagumo_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::InvalidGrid(_) | Error::GridMismatch { .. } | Error::InsufficientData(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone)]
struct PyGrid(GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(half_length: f64, points: usize) -> PyResult<Self> {
        GridSpec::new(half_length, points).map(Self).map_err(py_err)
    }

    #[getter]
    fn half_length(&self) -> f64 {
        self.0.half_length()
    }

    #[getter]
    fn points(&self) -> usize {
        self.0.points()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    fn coordinates(&self) -> Vec<f64> {
        self.0.coordinates()
    }

    fn __repr__(&self) -> String {
        format!("Grid(half_length={}, points={})", self.0.half_length(), self.0.points())
    }
}

#[pyclass(name = "Params", frozen, from_py_object)]
#[derive(Clone)]
struct PyParams(NagumoParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (rho = 1.0, a = 0.25, sigma = 0.0))]
    fn new(rho: f64, a: f64, sigma: f64) -> PyResult<Self> {
        NagumoParams::new(rho, a, sigma).map(Self).map_err(py_err)
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    /// `√(2ρ)(1/2 − a)`.
    fn exact_speed(&self) -> f64 {
        self.0.exact_speed()
    }

    fn with_sigma(&self, sigma: f64) -> PyResult<Self> {
        self.0.with_sigma(sigma).map(Self).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Params(rho={}, a={}, sigma={})", self.0.rho, self.0.a, self.0.sigma)
    }
}

#[pyclass(name = "Spectral", frozen)]
struct PySpectral(SpectralData);

#[pymethods]
impl PySpectral {
    #[getter]
    fn psi(&self) -> Vec<f64> {
        self.0.psi_tw.values().to_vec()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn neutral_eigenvalue(&self) -> f64 {
        self.0.neutral_eigenvalue
    }

    #[getter]
    fn second_eigenvalue(&self) -> f64 {
        self.0.second_eigenvalue
    }

    fn linearization_scale(&self) -> f64 {
        self.0.linearization.scale()
    }
}

/// Deterministic front with its spectral data.
#[pyclass(name = "Wave", frozen)]
struct PyWave {
    params: NagumoParams,
    wave: WaveProfile,
    spectral: Py<PySpectral>,
}

#[pymethods]
impl PyWave {
    #[new]
    fn new(py: Python<'_>, params: PyParams, grid: PyGrid) -> PyResult<Self> {
        let p0 = params.0.with_sigma(0.0).map_err(py_err)?;
        let (wave, spec) = py
            .detach(|| {
                let w = wave::solve_deterministic_wave(&p0, &grid.0, None)?;
                let s = wave::compute_spectral_data(&w, &p0)?;
                Ok((w, s))
            })
            .map_err(py_err)?;
        Ok(Self {
            params: p0,
            wave,
            spectral: Py::new(py, PySpectral(spec))?,
        })
    }

    #[getter]
    fn speed(&self) -> f64 {
        self.wave.speed
    }

    #[getter]
    fn profile(&self) -> Vec<f64> {
        self.wave.profile.values().to_vec()
    }

    #[getter]
    fn derivative(&self) -> Vec<f64> {
        self.wave.derivative.values().to_vec()
    }

    #[getter]
    fn residual_history(&self) -> Vec<f64> {
        self.wave.residual_history.clone()
    }

    #[getter]
    fn spectral(&self, py: Python<'_>) -> Py<PySpectral> {
        self.spectral.clone_ref(py)
    }

    /// `(Φ_σ, c_σ)` for noise amplitude `sigma`.
    fn stochastic(&self, py: Python<'_>, sigma: f64) -> PyResult<(Vec<f64>, f64)> {
        let p = self.params.with_sigma(sigma).map_err(py_err)?;
        let spec = &self.spectral.get().0;
        let sw = py
            .detach(|| solve_stochastic_wave(&p, self.wave.grid(), spec, &self.wave))
            .map_err(py_err)?;
        Ok((sw.profile.into_values(), sw.speed))
    }
}

fn sim_config(params: &PyParams, grid: &PyGrid, dt: f64, t_end: f64, seed: u64) -> PyResult<SimConfig> {
    let cfg = SimConfig {
        params: params.0,
        grid: grid.0,
        dt,
        t_end,
        seed,
        scheme: Scheme::SemiImplicit,
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

#[derive(Serialize, Default)]
struct Track {
    t: Vec<f64>,
    gamma: Vec<f64>,
    v_l2: Vec<f64>,
    v_h1: Vec<f64>,
    c_sigma: f64,
    stopped: Option<String>,
}

impl Track {
    fn push(&mut self, r: PhaseRecord) {
        self.t.push(r.t);
        self.gamma.push(r.gamma);
        self.v_l2.push(r.v_l2);
        self.v_h1.push(r.v_h1);
    }
}

/// One tracked path started on `Φ_σ`. Returns a dict of the phase `Γ(t)`
/// and the norms of `V(t)`; `stopped` names the event that ended the run
/// early, if any.
#[pyfunction]
#[pyo3(signature = (params, grid, dt = 0.005, t_end = 10.0, seed = 1, pad_factor = 2))]
fn simulate(
    py: Python<'_>,
    params: PyParams,
    grid: PyGrid,
    dt: f64,
    t_end: f64,
    seed: u64,
    pad_factor: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = sim_config(&params, &grid, dt, t_end, seed)?;
    let track = py
        .detach(|| -> Result<Track, Error> {
            let p0 = cfg.params.with_sigma(0.0)?;
            let w = wave::solve_deterministic_wave(&p0, &cfg.grid, None)?;
            let spec = wave::compute_spectral_data(&w, &p0)?;
            let sw = solve_stochastic_wave(&cfg.params, &cfg.grid, &spec, &w)?;
            let freezer = Freezer::new(&sw, &spec, &cfg.params)?;
            let sampler = Arc::new(NoiseSampler::build(cfg.grid, pad_factor)?);
            let mut stream = NoiseStream::for_path(sampler, cfg.seed, 0);
            let state = initial_condition(InitialCondition::ExactWave, &sw.profile, &cfg.grid, &cfg.params)?;
            let mut track = Track {
                c_sigma: sw.speed,
                ..Track::default()
            };
            let mut tracker = PhaseTracker::new(&freezer, &state.u, cfg.dt, |t, ps| {
                track.push(PhaseRecord::new(t, ps));
                Ok(ControlFlow::Continue(()))
            })?;
            let first = PhaseRecord::new(0.0, &tracker.state);
            let outcome = run_path(&cfg, state, &mut stream, &mut [&mut tracker]);
            drop(tracker);
            match outcome {
                Ok(_) => {}
                Err(e @ (Error::WaveLost { .. } | Error::FrontNearBoundary { .. })) => {
                    track.stopped = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
            let mut out = Track::default();
            out.push(first);
            out.t.extend(track.t);
            out.gamma.extend(track.gamma);
            out.v_l2.extend(track.v_l2);
            out.v_h1.extend(track.v_h1);
            out.c_sigma = track.c_sigma;
            out.stopped = track.stopped;
            Ok(out)
        })
        .map_err(py_err)?;
    to_py(py, &track)
}

/// Monte Carlo exit-time ensemble; returns the exit-result dict.
#[pyfunction]
#[pyo3(signature = (
    params, grid, sigma_list, eta = 0.01, t_horizon = 20.0, n_paths = 400,
    master_seed = 1, dt = 0.005, epsilon = None, pad_factor = 2
))]
#[allow(clippy::too_many_arguments)]
fn exit_ensemble(
    py: Python<'_>,
    params: PyParams,
    grid: PyGrid,
    sigma_list: Vec<f64>,
    eta: f64,
    t_horizon: f64,
    n_paths: usize,
    master_seed: u64,
    dt: f64,
    epsilon: Option<f64>,
    pad_factor: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = ExitConfig {
        eta,
        epsilon,
        sigma_list,
        t_horizon,
        n_paths,
        master_seed,
        sim: sim_config(&params, &grid, dt, t_horizon, master_seed)?,
        initial: InitialCondition::ExactWave,
        pad_factor,
    };
    let res = py.detach(|| exit_stats::run_ensemble(&cfg)).map_err(py_err)?;
    to_py(py, &res)
}

/// Fits `ln(−ln(1 − p̂))` against the scaling variable for an exit-result
/// dict returned by [`exit_ensemble`].
#[pyfunction]
fn scaling_fit(py: Python<'_>, result: Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (result,))?.extract()?;
    let res: exit_stats::ExitResult =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let fit = exit_stats::scaling_fit(&res, res.eta).map_err(py_err)?;
    to_py(py, &fit)
}

/// `E sup_{t≤T} ‖·‖²` over a list of horizons for `"scalar_ou"` or
/// `"semigroup_convolution"`.
#[pyfunction]
#[pyo3(signature = (horizons, process = "scalar_ou", dt = 0.05, n_paths = 2000, seed = 1))]
fn growth_experiment(
    py: Python<'_>,
    horizons: Vec<f64>,
    process: &str,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let process = match process {
        "scalar_ou" => GrowthProcess::ScalarOu,
        "semigroup_convolution" => GrowthProcess::SemigroupConvolution,
        other => return Err(PyValueError::new_err(format!("unknown process {other:?}"))),
    };
    let cfg = GrowthExperimentConfig {
        horizons,
        dt,
        n_paths,
        seed,
        process,
        convolution: ConvolutionSetup::default(),
    };
    let report = py.detach(|| chaining::sup_growth_experiment(&cfg)).map_err(py_err)?;
    to_py(py, &report)
}

/// Increment metric of the OU process or `d_max·min(√|t−s|, 1)` on `[0, T]`.
#[pyclass(name = "Metric", frozen)]
struct PyMetric(IncrementMetric);

#[pymethods]
impl PyMetric {
    #[staticmethod]
    fn ou(horizon: f64) -> PyResult<Self> {
        IncrementMetric::ou(horizon).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn sqrt_capped(horizon: f64, d_max: f64) -> PyResult<Self> {
        IncrementMetric::sqrt_capped(horizon, d_max).map(Self).map_err(py_err)
    }

    #[getter]
    fn d_max(&self) -> f64 {
        self.0.d_max()
    }

    fn __call__(&self, t: f64, s: f64) -> f64 {
        self.0.eval(t, s)
    }

    fn covering_number(&self, nu: f64) -> PyResult<u64> {
        chaining::covering_number(&self.0, nu).map_err(py_err)
    }

    fn dudley_integral(&self, py: Python<'_>) -> PyResult<f64> {
        py.detach(|| chaining::dudley_integral(&self.0)).map_err(py_err)
    }
}

#[pyfunction]
fn moment_to_tail(theta: f64, vartheta: f64) -> f64 {
    chaining::moment_to_tail(theta, vartheta)
}

#[pyfunction]
fn tail_to_moment(a: f64, theta: f64, p: u32) -> PyResult<f64> {
    chaining::tail_to_moment(a, theta, p).map_err(py_err)
}

#[pyfunction]
fn max_moment_bound(n: u64, theta: f64, p: u32) -> PyResult<f64> {
    chaining::max_moment_bound(n, theta, p).map_err(py_err)
}

#[pyfunction]
fn dudley_sqrt_capped_closed_form(horizon: f64, d_max: f64) -> f64 {
    chaining::dudley_sqrt_capped_closed_form(horizon, d_max)
}

/// `‖u‖_{L²}` and `‖u‖_{H¹}` of grid values.
#[pyfunction]
fn norms(grid: PyGrid, values: Vec<f64>) -> PyResult<(f64, f64)> {
    let u = GridFunction::new(grid.0, values).map_err(py_err)?;
    Ok((core_grid::norm_l2(&u), core_grid::norm_h1(&u)))
}

#[pymodule]
fn nagumo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PySpectral>()?;
    m.add_class::<PyWave>()?;
    m.add_class::<PyMetric>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(exit_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_fit, m)?)?;
    m.add_function(wrap_pyfunction!(growth_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(moment_to_tail, m)?)?;
    m.add_function(wrap_pyfunction!(tail_to_moment, m)?)?;
    m.add_function(wrap_pyfunction!(max_moment_bound, m)?)?;
    m.add_function(wrap_pyfunction!(dudley_sqrt_capped_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(norms, m)?)?;
    Ok(())
}

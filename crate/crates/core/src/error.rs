use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shift {delta} exceeds half the domain half-length {limit}")]
    ShiftTooLarge { delta: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64, history: Vec<f64> },

    #[error("singular linear system at pivot {0}")]
    SingularMatrix(usize),

    #[error("eigenvalue computation failed: {0}")]
    EigenFailed(String),

    #[error("spectral gap is not positive (second eigenvalue {0:e})")]
    NoSpectralGap(f64),

    #[error("covariance embedding clipped a relative mass of {clipped:e} (limit {limit:e}); increase padding")]
    EmbeddingClipped { clipped: f64, limit: f64 },

    #[error("solution blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("wave lost: phase pairing {pairing:e} below guard {guard:e}")]
    WaveLost { pairing: f64, guard: f64 },

    #[error("front at {position} drifted within {margin} of the boundary")]
    FrontNearBoundary { position: f64, margin: f64 },

    #[error("no sign change of the phase condition within |gamma| <= {limit}")]
    NoBracket { limit: f64 },

    #[error("metric is not monotone in |t - s| near s = {start}, t = {t}")]
    NonMonotoneMetric { start: f64, t: f64 },

    #[error("quadrature did not converge (estimated error {0:e})")]
    QuadratureFailed(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors surfaced by group arithmetic, kernel construction, solvers and the
/// study harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported group step {0}: the polynomial group law is implemented for step <= 2")]
    UnsupportedStep(usize),

    #[error("invalid group definition: {0}")]
    InvalidGroup(String),

    #[error("dilation factor must be positive, got {0}")]
    InvalidDilation(f64),

    #[error("basis index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("non-finite coordinates")]
    NonFinite,

    #[error("kernel construction failed: {0}")]
    Kernel(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("positivity constant M is not set; sample the kernel reach first")]
    PositivityUnset,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("time step {dt} exceeds the stable bound {dt_max}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("non-finite solution value at node {node}, t = {t}")]
    NonFiniteState { node: usize, t: f64 },

    #[error("contraction factor q = {q} >= 1: shrink the time window")]
    ContractionWindow { q: f64 },

    #[error("rate table overflow: {0}")]
    RateOverflow(String),

    #[error("rate fit rejected: {0}")]
    RateFit(String),

    #[error("subdominance guard: {0}")]
    Subdominance(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by grid, operator and solver routines.
#[derive(Debug, Error)]
pub enum KacError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative time t = {0}")]
    NegativeTime(f64),

    #[error("stability violation: dt * spectral radius = {product:.4} exceeds {limit}")]
    Unstable { product: f64, limit: f64 },

    #[error("NaN detected at step {step}")]
    NanAtStep { step: usize },

    #[error("picard iteration did not converge after {iterations} iterations (last deltas {last:e}, {previous:e})")]
    PicardNotConverged {
        iterations: usize,
        last: f64,
        previous: f64,
    },

    #[error("quadrature not converged for {what}: refinement changed the value by {gap:e} (tol {tol:e})")]
    QuadratureNotConverged { what: &'static str, gap: f64, tol: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KacError>;

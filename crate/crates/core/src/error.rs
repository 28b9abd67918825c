use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("stencil index {index} out of range for field of length {len}")]
    IndexOutOfRange { index: isize, len: usize },

    #[error("initial profile violates the clamped end: |value at x=0| = {value:e} exceeds {tolerance:e}")]
    ClampViolation { value: f64, tolerance: f64 },

    #[error("state does not match model: {0}")]
    StateMismatch(String),

    #[error("singular matrix: pivot {pivot:e} at row {row} below threshold {threshold:e}")]
    Singular { row: usize, pivot: f64, threshold: f64 },

    #[error("newton iteration did not converge at t = {t}: {} iterations, last update {last:e}, worst dof {worst_dof}", history.len())]
    NewtonFailure {
        t: f64,
        history: Vec<f64>,
        last: f64,
        worst_dof: usize,
    },

    #[error("non-finite state at t = {0}")]
    NonFinite(f64),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite values detected in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error (line {line}): {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("hypothesis validation failed: {0}")]
    Validation(String),

    #[error("solver abort at step {step} (t = {time:.6}): {detail}")]
    SolverAbort {
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("fluid fixed-point solve did not converge within {iters} iterations at step {step}")]
    FixedPoint { step: usize, iters: usize },

    #[error("velocity average must vanish, got L1 mean {norm:.3e}")]
    MeanNotZero { norm: f64 },

    #[error("probe assertion failed: {0}")]
    ProbeFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

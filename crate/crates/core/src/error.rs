use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("p-step solver did not converge at p = {p} after {iterations} iterations (stationarity {residual:.3e})")]
    InnerNotConverged {
        p: f64,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "primal-dual solver did not converge after {iterations} iterations (duality gap {gap:.3e})"
    )]
    PrimalDualNotConverged { iterations: usize, gap: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("step {step} violates its certificate: {detail}")]
    CertificateViolation { step: usize, detail: String },

    #[error("source does not cover [{start}, {end}] (available up to {available})")]
    SourceCoverage {
        start: f64,
        end: f64,
        available: f64,
    },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("incompatible trajectories: {0}")]
    Incompatible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

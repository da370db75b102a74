use thiserror::Error;

/// Every failure mode surfaced by the solvers and verifiers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate reduction map: {0}")]
    DegenerateMap(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("non-finite value while evaluating {what} at {at:?}")]
    Evaluation { what: String, at: Vec<f64> },

    #[error("blow-up at t = {t}: {detail}")]
    BlowUp { t: f64, detail: String },

    #[error("newton failed after {iterations} iterations (residual {residual:e})")]
    NewtonFailure { iterations: usize, residual: f64 },

    #[error("shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("geometry violation: {0}")]
    Geometry(String),

    #[error("step refused: {0}")]
    StepRefused(String),

    #[error("box too small: {0}")]
    BoxTooSmall(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub(crate) fn check_finite(what: &str, at: &[f64], values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what: what.to_string(),
            at: at.to_vec(),
        })
    }
}

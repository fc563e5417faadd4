use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for {count} samples")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("training samples have zero spread; cannot fit a density estimate")]
    ZeroSpread,

    #[error("sinkhorn did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("kernel row {row} sums to {sum:e}; increase epsilon")]
    DegenerateKernel { row: usize, sum: f64 },

    #[error("kernel weights underflowed at the query point; increase epsilon")]
    WeightUnderflow,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("operation requires {required} mode")]
    UnsupportedMode { required: &'static str },

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error("non-finite {what} at {point:?}")]
    NonFiniteField { what: &'static str, point: Vec<f64> },

    #[error("gradient check failed: relative error {0:e}")]
    GradientMismatch(f64),

    #[error("integrator step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                return Error::Io(io);
            }
            unreachable!("is_io_error implies an Io kind");
        }
        Error::Csv(e)
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures caused by the inputs or by non-convergence, as
    /// opposed to internal faults. Drives the CLI exit code.
    pub fn is_user_facing(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io(_))
    }
}

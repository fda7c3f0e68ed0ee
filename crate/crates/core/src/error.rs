use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DeniseError>;

#[derive(Debug, Error)]
pub enum DeniseError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },

    #[error("{routine} did not converge after {iterations} iterations")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient at step {step} (sample index {sample})")]
    NonFiniteGradient { step: usize, sample: usize },

    #[error("step size increased at step {step}: {previous} -> {current}")]
    StepSizeIncrease {
        step: usize,
        previous: f64,
        current: f64,
    },

    #[error("relative error undefined: reference matrix has zero norm")]
    ZeroReference,

    #[error("lambda calibration failed: {0}")]
    Calibration(String),

    #[error("{method} failed on {failures} of {total} samples")]
    MethodFailed {
        method: String,
        failures: usize,
        total: usize,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DeniseError {
    pub(crate) fn dim(expected: impl ToString, got: impl ToString) -> Self {
        DeniseError::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DeniseError::NoConvergence { .. }
            | DeniseError::NonFiniteGradient { .. }
            | DeniseError::StepSizeIncrease { .. }
            | DeniseError::ZeroReference
            | DeniseError::Calibration(_)
            | DeniseError::MethodFailed { .. } => 3,
            _ => 2,
        }
    }
}

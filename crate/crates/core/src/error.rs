use thiserror::Error;

use crate::schedule::Parameterization;

/// Errors raised by schedules, oracles, solvers and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate direction: norm {norm:e} is below {threshold:e}")]
    DegenerateDirection { norm: f64, threshold: f64 },

    #[error("oracle predicts in {found:?} mode but the solver requires {expected:?}")]
    ParameterizationMismatch {
        expected: Parameterization,
        found: Parameterization,
    },

    #[error("state became non-finite at step {index}")]
    NonFiniteState { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

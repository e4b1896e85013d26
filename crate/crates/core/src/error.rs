use thiserror::Error;

use crate::conic::SolveStatus;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("degenerate scaling: column {column} of {matrix} is identically zero")]
    DegenerateScaling { matrix: &'static str, column: usize },
    #[error("degenerate level: {0}")]
    DegenerateLevel(String),
    #[error("degenerate instrument: fitted instrument for endogenous regressor {endogenous} is identically zero")]
    DegenerateInstrument { endogenous: usize },
    #[error("enumeration cap exceeded: {size} sign-enumerated indices > cap {cap}; use the certificate route")]
    EnumerationCap { size: usize, cap: usize },
    #[error("solver returned {status:?}: {context}")]
    Solver {
        status: SolveStatus,
        context: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SparfaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index ({row}, {col}) out of range for {rows}x{cols}")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("no observed entries")]
    NoObservations,

    #[error("degenerate column {0}: no observed information")]
    DegenerateColumn(usize),

    #[error("empty candidate grid")]
    EmptyGrid,

    #[error("zero-norm reference in {0}")]
    ZeroNorm(&'static str),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub type Result<T> = std::result::Result<T, SparfaError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SparfaError {
    SparfaError::InvalidArgument(msg.into())
}

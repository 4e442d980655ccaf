use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PcsError>;

#[derive(Debug, Error)]
pub enum PcsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at sample {row}, feature {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero pooled standard deviation at feature {0}")]
    ZeroPooledSd(usize),

    #[error("index {index} out of range (valid rows are 0..{dim})")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("dimension mismatch: expected p = {expected}, got p = {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("covariance store format error: {0}")]
    Format(String),

    /// A submatrix could not be inverted without ridge regularization.
    #[error("singular covariance submatrix of size {size}")]
    Singular { size: usize },

    #[error("row {row}: {source}")]
    RowFailed {
        row: usize,
        #[source]
        source: Box<PcsError>,
    },

    #[error("degenerate score vector (zero standard deviation)")]
    DegenerateScores,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PcsError {
    /// True for failures that come from the numerics rather than from the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            PcsError::Singular { .. } | PcsError::DegenerateScores => true,
            PcsError::RowFailed { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// Row index attached to a row-level failure, if any.
    pub fn row(&self) -> Option<usize> {
        match self {
            PcsError::RowFailed { row, .. } => Some(*row),
            _ => None,
        }
    }

    pub(crate) fn in_row(self, row: usize) -> PcsError {
        match self {
            e @ PcsError::RowFailed { .. } => e,
            e => PcsError::RowFailed {
                row,
                source: Box::new(e),
            },
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the restoration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("patch index {index} out of range ({count} patches)")]
    PatchIndex { index: usize, count: usize },

    #[error("pixel (row {row}, col {col}) is not covered by any patch")]
    Uncovered { row: usize, col: usize },

    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimensionMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("need at least 2 sample vectors, got {0}")]
    TooFewSamples(usize),

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("patch at (row {row}, col {col}) has no observed pixel; use a larger keep probability")]
    EmptyPatch { row: usize, col: usize },

    #[error("non-finite value produced at iteration {iteration}")]
    NonFinite { iteration: usize },
}

impl Error {
    pub(crate) fn dims(a: (usize, usize), b: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_width: a.0,
            left_height: a.1,
            right_width: b.0,
            right_height: b.1,
        }
    }

    /// True for errors that come from numerical breakdown rather than bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } | Error::TooFewSamples(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

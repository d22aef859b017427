use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LeganError>;

#[derive(Debug, Error)]
pub enum LeganError {
    /// Incompatible tensor shapes; `detail` names the offending dimension.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: empty batch")]
    EmptyBatch { op: &'static str },

    /// A loss or metric became NaN/Inf during training.
    #[error("non-finite {quantity} at epoch {epoch}, batch {batch}")]
    NonFinite {
        quantity: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file at a byte offset or line.
    #[error("{path}: {location}: {detail}")]
    Format {
        path: PathBuf,
        location: String,
        detail: String,
    },
}

impl LeganError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        LeganError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        LeganError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LeganError::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} is too small for {num_classes} classes (need at least {})", 2 * num_classes)]
    DimensionTooSmall { dim: usize, num_classes: usize },

    #[error("need at least 3 tokens per sample, got {0}")]
    TooFewTokens(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("token position {pos} out of range for {len} tokens")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("nonpositive loss {value} at epoch {epoch} inside the fit window")]
    NonPositiveLoss { epoch: usize, value: f64 },

    #[error("empty fit window")]
    EmptyWindow,

    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed {what}: {reason}")]
    Malformed { what: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            what: what.into(),
            reason: reason.into(),
        }
    }
}

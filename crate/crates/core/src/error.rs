use std::path::PathBuf;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("grid with {got} points undersamples this basis (need at least {need})")]
    Undersampled { got: usize, need: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("polynomial degree {got} exceeds the configured maximum {max}")]
    DegreeTooHigh { got: usize, max: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("grid too coarse: resolving the partition needs at least {required_steps} steps")]
    GridTooCoarse { required_steps: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

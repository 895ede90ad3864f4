use std::path::PathBuf;

/// Errors produced by the tuning laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("log parse error in field `{field}`: {reason}")]
    Parse { field: &'static str, reason: String },

    #[error("parameter jump {from:?} -> {to:?} between t={t_from} and t={t_to} is not a single action")]
    IllegalTransition {
        from: (u32, u32),
        to: (u32, u32),
        t_from: f64,
        t_to: f64,
    },

    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("link carried {carried} bit/s over capacity {capacity} bit/s")]
    CapacityExceeded { carried: f64, capacity: f64 },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

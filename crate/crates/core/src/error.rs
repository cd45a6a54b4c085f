use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("window of width {width} does not fit a sequence of length {len}")]
    Window { len: usize, width: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid state: {0}")]
    State(String),

    #[error("{0}")]
    Degenerate(String),

    #[error("insufficient history: {len} days cannot supply windows of lag {lag}")]
    InsufficientHistory { len: usize, lag: usize },

    #[error("model build failed at {stage}: {reason}")]
    Build { stage: String, reason: String },

    #[error("{}:{line}: {reason}", path.display())]
    Parse { path: PathBuf, line: u64, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Data-shaped errors (bad CSV, misaligned series) as opposed to
    /// configuration or numeric ones. The CLI maps these to exit code 2.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Io { .. }
                | Error::InsufficientHistory { .. }
                | Error::Degenerate(_)
                | Error::Checkpoint(_)
                | Error::NonFinite(_)
        )
    }
}

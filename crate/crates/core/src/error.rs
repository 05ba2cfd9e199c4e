use std::path::PathBuf;

use thiserror::Error;

use crate::sim::RoundMetrics;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration (architecture, federation or run file) is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity showed up where finite numbers are required.
    #[error("numeric fault: {0}")]
    NumericFault(String),

    /// Training produced a non-finite loss. The trace holds every completed round.
    #[error("run diverged at round {round}: {reason}")]
    Diverged {
        round: usize,
        reason: String,
        trace: Vec<RoundMetrics>,
    },

    /// Enumeration would exceed the configured size cap.
    #[error("enumeration of {count} batch types exceeds cap {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("dataset is empty")]
    EmptyDataset,

    /// A CSV row could not be parsed. `line` is 1-based and counts the header.
    #[error("{path}: line {line}: {reason}")]
    Csv { path: PathBuf, line: u64, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

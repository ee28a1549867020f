//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
///
/// `Config` covers bad dimensions, malformed experiment files, and agent/env
/// mismatches caught at construction. `Usage` covers API misuse such as
/// stepping a finished episode or reading influence estimates before any fit.
/// `Training` covers numeric failures (non-finite gradients or losses) that
/// abort a run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training error: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}

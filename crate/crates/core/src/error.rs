//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be decoded (bad PNG, bad flow magic, truncated payload).
    #[error("format error: {0}")]
    Format(String),

    /// An operation was called with arguments violating its contract
    /// (shape mismatch, out-of-range values, wrong level counts).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid run configuration or corpus layout.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite loss or other numerical failure during training.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A scene specification that cannot be rendered (shape leaves the canvas).
    #[error("scene spec error: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

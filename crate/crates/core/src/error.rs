//! Error type shared across the crate.
//!
//! The variants map onto the CLI exit-code contract: configuration and parse
//! problems are caller mistakes, numeric failures are runtime blow-ups
//! (NaN/Inf), and contract/dimension violations indicate misuse of an API.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or sizes that cannot be combined.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An operation was called outside its documented preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity, or otherwise left the
    /// representable range.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid configuration values (bad hyperparameters, impossible
    /// signal specs, unknown option names).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

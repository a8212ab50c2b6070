//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the failure classes that callers are expected to
/// distinguish: `Domain` for invalid arguments to pure operations, `Config`
/// for bad run configuration caught at startup, `Protocol` for transmitter /
/// receiver desynchronization, and `Internal` for broken invariants that
/// indicate a bug rather than bad input.
#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("internal assertion failed: {0}")]
    Internal(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    /// Process exit code for the CLI: each error class gets a stable code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 2,
            Error::Config(_) | Error::ConfigParse(_) => 3,
            Error::Protocol(_) => 4,
            Error::Diverged(_) => 5,
            Error::Io(_) | Error::Image(_) | Error::Serialize(_) => 6,
            Error::Internal(_) => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

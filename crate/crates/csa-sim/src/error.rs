//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown {kind} {name:?}; known: {known:?}")]
    UnknownStrategy { kind: &'static str, name: String, known: Vec<&'static str> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no tokens")]
    NoTokens,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate norm")]
    DegenerateNorm,

    #[error("non-finite component in vector")]
    NonFinite,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("duplicate doc id {0}")]
    DuplicateDocId(u64),

    #[error("doc id {0} collides with an existing index entry")]
    IdCollision(u64),

    #[error("unknown doc id {0}")]
    UnknownDocId(u64),

    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    BadFormat(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

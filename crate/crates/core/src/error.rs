use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unknown company id {0}")]
    Lookup(u32),
    #[error("sampling exhausted: requested {requested}, only {available} candidates")]
    SamplingExhausted { requested: usize, available: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("sequence length {len} exceeds context length {max}")]
    Length { len: usize, max: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("singleton subgraph cannot form a matching task")]
    Unmatchable,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A graph query violated its preconditions (overlapping sets, unknown
    /// nodes, oversized oracle input, malformed query spec).
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    /// Input data violated a contract (non-finite values, length mismatch,
    /// degenerate columns, missing blocks).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A configuration or argument value is out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A text input (graph file, record line, CSV cell) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

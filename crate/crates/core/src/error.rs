//! Error type shared across the solver crates.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("incomplete policy: {0}")]
    IncompletePolicy(String),
    #[error("time tag mismatch: expected {expected}, got {got}")]
    TimeTagMismatch { expected: String, got: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("bracket failure: {0}")]
    Bracket(String),
}

pub type Result<T> = std::result::Result<T, Error>;

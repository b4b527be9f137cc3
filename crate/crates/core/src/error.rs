//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GdrError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file. `row` is the 1-based line number in the file.
    #[error("parse error in {path} at row {row}: {msg}")]
    Parse {
        path: String,
        row: usize,
        msg: String,
    },

    /// A non-finite value was found while loading or validating data.
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rejected configuration (caught before any compute starts).
    #[error("config error: {0}")]
    Config(String),

    /// The optimizer detected a non-finite or runaway coordinate.
    #[error("numeric abort at epoch {epoch}: point {point} is non-finite or diverged")]
    NumericAbort { epoch: usize, point: usize },
}

pub type Result<T> = std::result::Result<T, GdrError>;

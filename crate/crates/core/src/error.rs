//! Crate-wide error type.
//!
//! Variants map onto the CLI exit codes: config/usage problems exit 1,
//! data and schema problems exit 2, training failures exit 3, evaluation
//! failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up (matmul inner extents, channel counts).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument is outside the operation's domain (empty input, bad
    /// fraction, label out of range).
    #[error("domain error: {0}")]
    Domain(String),

    /// A call violates the module's state contract (missing cache, wrong
    /// mode).
    #[error("state error: {0}")]
    State(String),

    /// Numeric overflow or a non-finite value escaped a computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Schema(_) | Error::Data(_) | Error::Io(_) => 2,
            Error::Training(_) => 3,
            Error::Evaluation(_) => 4,
            // Internal contract violations surface as usage-level failures.
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

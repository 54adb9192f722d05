//! Error type shared by the library modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation (e.g. negative time).
    #[error("domain error: {0}")]
    Domain(String),

    /// Argument outside the representable range (e.g. past the end of a table).
    #[error("range error: {0}")]
    Range(String),

    /// Operation not supported for this variant (e.g. infinite horizon on tabulated data).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Kernel violates a structural requirement (e.g. divergent mass).
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// A documented precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An iteration failed to converge or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Trajectory or history state is inconsistent with the request.
    #[error("state error: {0}")]
    State(String),

    /// Least-squares fit could not be performed; carries offending record indices.
    #[error("fit error: {msg} (records {indices:?})")]
    Fit { msg: String, indices: Vec<usize> },

    /// Configuration file problem with a line diagnostic.
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

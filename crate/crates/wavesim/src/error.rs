//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by configuration parsing, file I/O, numerical solvers
/// and contract checks.
#[derive(Debug)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad key, bad value, geometry
    /// that violates an invariant, grid too coarse, ...).
    Config(String),
    /// A point or argument outside the mathematical domain of an operation.
    Domain(String),
    /// Numerical solver failure (factorization breakdown, residual too large).
    Solver(String),
    /// A caller violated an API contract (shape mismatch, misaligned grids).
    Contract(String),
    /// Malformed binary file; `offset` is the byte position of the problem.
    Format { offset: u64, message: String },
    /// Underlying I/O error.
    Io(std::io::Error),
}

impl Error {
    /// Process exit code associated with this error kind.
    ///
    /// 2 = configuration error, 3 = numeric/solver error, 4 = I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Domain(_) => 2,
            Error::Solver(_) => 3,
            Error::Format { .. } | Error::Io(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Solver(msg) => write!(f, "solver error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

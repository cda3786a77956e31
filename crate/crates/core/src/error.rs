//! Error type shared across the crate.
//!
//! Variants are grouped by how a front end should report them: configuration
//! and shape problems (caller mistakes), numeric failures (NaN losses,
//! non-positive-definite matrices), and format problems (unreadable files,
//! version mismatches). The CLI maps these groups onto distinct exit codes.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration value or inconsistent dimensions supplied by the caller.
    Config(String),
    /// Incompatible tensor shapes in an operation.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Numeric failure: divergent loss, non-finite values, failed factorization.
    Numeric(String),
    /// Malformed file contents or an unsupported format version.
    Format(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Shape { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

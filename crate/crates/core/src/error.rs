use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("degenerate variance estimate: {0}")]
    DegenerateVariance(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

impl Error {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::DegenerateVariance(_) => "degenerate_variance",
            Error::NotConverged(_) => "not_converged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// An I/O error whose message names the file involved.
    pub(crate) fn io_at(path: &Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }

    /// A CSV error, with I/O failures kept as [`Error::Io`].
    pub(crate) fn csv_at(path: &Path, e: csv::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io_at(path, io),
            _ => Error::InvalidInput(msg),
        }
    }

    /// Process exit code: 3 for non-convergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotConverged(_) => 3,
            _ => 2,
        }
    }
}

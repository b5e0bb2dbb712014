use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A row or line of an input file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// Input parsed but violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Input is well-formed but statistically degenerate for the requested fit.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// A pipeline stage failed; wraps the underlying cause.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } => true,
            Error::Json(_) | Error::Csv(_) => true,
            Error::Degenerate(_) => false,
            Error::Stage { source, .. } => source.is_validation(),
        }
    }
}

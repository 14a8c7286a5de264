use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the offline/online pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("constitutive law failed at integration point {point}: {msg}")]
    LawFailure { point: usize, msg: String },

    #[error("{stage} did not converge: {msg}")]
    Convergence { stage: String, msg: String },

    #[error("numerical failure in {stage}: {msg}")]
    Numerical { stage: String, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            found,
        }
    }

    pub fn numerical(stage: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numerical {
            stage: stage.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by the numerics rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::LawFailure { .. } | Error::Convergence { .. } | Error::Numerical { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

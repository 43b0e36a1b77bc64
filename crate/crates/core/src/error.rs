use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e} (largest {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("expected exactly one null eigenvalue, found {found}")]
    RankMismatch { found: usize },

    #[error("frequency bin {bin}: {source}")]
    AtBin {
        bin: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid variance: {0}")]
    InvalidVariance(String),

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("numerical failure at {location}: {what}")]
    Numerical { location: String, what: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(location: impl Into<String>, what: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            what: what.into(),
        }
    }

    pub fn at_bin(self, bin: usize) -> Self {
        Error::AtBin {
            bin,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status: 1 verification failure, 2 invalid input, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 1,
            Error::AtBin { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            Error::Numerical { .. }
            | Error::NotPsd { .. }
            | Error::RankMismatch { .. }
            | Error::Inconsistent(_) => 3,
            _ => 2,
        }
    }
}

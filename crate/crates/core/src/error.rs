use std::io;
use std::path::PathBuf;

use crate::numeric::NumericError;

pub type Result<T, E = PriseError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PriseError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("record `{record}`: {field}: {message}")]
    Validation {
        record: String,
        field: String,
        message: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Training(String),
}

impl PriseError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(
        record: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Self::Validation {
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Io { .. } | Self::Parse { .. } | Self::Validation { .. } | Self::Data(_) => 2,
            Self::Numeric(NumericError::NonFiniteGradient { .. }) | Self::Training(_) => 3,
            Self::Numeric(_) => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Bad or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller broke an operation precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Images or dataset files could not be ingested.
    #[error("data error: {0}")]
    Data(String),

    /// A training loss became NaN or infinite.
    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    /// Wraps an error with the sweep row it came from.
    #[error("row {row}: {source}")]
    Row {
        row: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_row(self, row: impl Into<String>) -> Self {
        Error::Row {
            row: row.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 configuration, 3 data, 4 divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Divergence(_) => 4,
            Error::Row { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

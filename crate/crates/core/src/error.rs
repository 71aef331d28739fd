use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parameter vectors belong to different model specs")]
    SpecMismatch,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("partition infeasible after {attempts} attempts: some client has fewer than {min_client_samples} samples")]
    PartitionInfeasible {
        attempts: usize,
        min_client_samples: usize,
    },

    #[error("client {client} has an empty shard")]
    EmptyShard { client: usize },

    #[error("client {client} has role {actual}, trainer requires {expected}")]
    WrongRole {
        client: usize,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the configuration document rather than by
    /// the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json { .. })
    }
}

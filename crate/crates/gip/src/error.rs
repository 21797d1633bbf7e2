use std::path::PathBuf;

use gip_core::ErrorKind;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// `verify` found an output outside tolerance.
    pub const MISMATCH: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const SCHEMA: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] gip_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Schema { .. } => exit::SCHEMA,
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Schema => exit::SCHEMA,
                ErrorKind::Numeric => exit::NUMERIC,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: byte offset {offset}: {message}")]
    Payload { path: PathBuf, offset: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] telegraph_core::Error),
}

impl CliError {
    /// 2 for anything the user can fix in the inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use telegraph_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::Payload { .. } => 2,
            CliError::Core(E::InvalidArgument(_) | E::CorruptInput(_) | E::InsufficientData(_)) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CliError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] hfl_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_IO,
        }
    }
}

/// Attaches `path` to core errors raised while handling that file.
pub trait AtPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> AtPath<T> for hfl_core::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::Core(e.with_path(path)))
    }
}

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("read failed: {0}")]
    Read(#[source] io::Error),

    #[error("write failed at byte offset {offset}: {source}")]
    Write {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("bad magic {0:?}, expected \"HFLT\"")]
    BadMagic([u8; 4]),

    #[error("unknown HFLT format version {0}")]
    UnknownVersion(u32),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),

    #[error("truncated stream while reading {0}")]
    Truncated(&'static str),

    #[error("PGM: {0}")]
    Pgm(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("feature stack: {0}")]
    Stack(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("CSV: {0}")]
    Csv(String),

    #[error("training diverged at epoch {epoch} (loss {loss}); lower the learning rate")]
    Divergence { epoch: usize, loss: f64 },

    #[error("eigensolver did not converge after {iterations} iterations; best residuals {residuals:?}")]
    NoConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    At {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io_at(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches a file path unless the error already carries one.
    pub fn with_path(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::At { .. }) => e,
            e => Error::At {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, past any path annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::At { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::Divergence { .. } | Error::NoConvergence { .. }
        )
    }
}

use std::path::{Path, PathBuf};

use icl_core::discovery::DiscoveryError;
use icl_core::learners::LearnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for everything
    /// that went wrong with data or files.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
        move |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

use std::path::{Path, PathBuf};

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::netpbm::FormatError;

/// Everything a command can fail with. [`RunError::exit_code`] maps each
/// variant onto the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },

    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        source: CheckpointError,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("gradient check failed for: {}", .0.join(", "))]
    GradcheckFailed(Vec<String>),

    #[error(transparent)]
    Core(#[from] mmnet_core::Error),
}

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage or configuration, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use mmnet_core::Error as E;
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::GradcheckFailed(_) => 3,
            Self::Core(E::NonFiniteLoss { .. } | E::NonFinite(_)) => 3,
            Self::Core(
                E::Config(_) | E::FoldIndex(_) | E::ClassCount(_) | E::InvalidOptimizer(_),
            ) => 1,
            _ => 2,
        }
    }
}

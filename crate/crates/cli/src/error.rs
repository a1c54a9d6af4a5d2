use std::path::{Path, PathBuf};

use distilnas_core::Error as CoreError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{what} not found at {}; run `{phase}` first", path.display())]
    Missing { what: String, path: PathBuf, phase: &'static str },
    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{phase} failed: {cause}")]
    Phase { phase: &'static str, cause: Box<CliError> },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn checkpoint(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Checkpoint {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 1 for anything the user can fix, 2 for broken internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 2,
            CliError::Core(CoreError::Tensor(_) | CoreError::State(_)) => 2,
            CliError::Phase { cause, .. } => cause.exit_code(),
            _ => 1,
        }
    }
}

use std::path::{Path, PathBuf};

/// Errors surfaced by the command line and experiment runner.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("held-out speaker violation: {0}")]
    HeldOutViolation(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Core(#[from] xclone_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    /// Process exit code: 2 usage, 3 data or format, 4 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Manifest(_) => 2,
            CliError::Core(e) if e.is_divergence() => 4,
            CliError::Core(xclone_core::Error::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}

use std::path::{Path, PathBuf};

use bpar_core::Error as ModelError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// An input file or directory is missing or malformed.
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn input(path: &Path, message: impl Into<String>) -> Self {
        Self::Input { path: path.to_path_buf(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// 2 for usage and validation failures, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Input { .. } => 2,
            Self::Model(e) => match e {
                ModelError::Degenerate(_) | ModelError::NotPositiveDefinite(_) | ModelError::ConstantConstruct(_) => 1,
                _ => 2,
            },
            Self::Io { .. } => 1,
        }
    }
}

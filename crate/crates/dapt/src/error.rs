use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = DaptError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DaptError {
    #[error(transparent)]
    Core(#[from] dapt_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A malformed line in an input file.
    #[error("{}:{line}: {message}", path.display())]
    Record { path: PathBuf, line: usize, message: String },
    /// A file whose overall structure is wrong.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    /// Bad configuration or arguments, one message per offending field.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

impl DaptError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub fn record(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::Record { path: path.to_path_buf(), line, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::Validation(vec![message.into()])
    }

    /// Process exit status: 1 for validation problems, 2 for anything that
    /// failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            DaptError::Validation(_) => 1,
            DaptError::Core(
                dapt_core::Error::InvalidConfig(_)
                | dapt_core::Error::InvalidTrainConfig(_)
                | dapt_core::Error::InvalidNoise(_),
            ) => 1,
            _ => 2,
        }
    }
}

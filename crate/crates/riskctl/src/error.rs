use std::path::PathBuf;

use thiserror::Error;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Runtime = 1,
    Usage = 2,
    Infeasible = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] riskctl_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        use riskctl_core::Error as E;
        match self {
            Self::Config { .. } | Self::Usage(_) => ExitCode::Usage,
            Self::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ExitCode::Usage,
            Self::Core(E::Infeasible { .. }) => ExitCode::Infeasible,
            Self::Core(E::Config(_)) => ExitCode::Usage,
            _ => ExitCode::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

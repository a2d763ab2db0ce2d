use std::path::PathBuf;

use sentiscope_service::ServiceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sentiscope_core::Error),

    #[error(transparent)]
    Service(#[from] ServiceError),

    #[error("{what} not found at {}; run `sentiscope {prior}` first", path.display())]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        prior: &'static str,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// 1 for invalid input or configuration, 2 for filesystem and network failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) | CliError::Invalid(_) => 1,
            CliError::Service(ServiceError::Journal { .. }) => 2,
            CliError::Service(ServiceError::Invalid(e)) if e.is_io() => 2,
            CliError::Service(_) => 1,
            CliError::MissingArtifact { .. } | CliError::Io { .. } => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

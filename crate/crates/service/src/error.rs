use std::path::PathBuf;

use sentiscope_core::{AnnotatorId, ImageId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("annotator {annotator} already annotated image {image}")]
    Conflict { annotator: AnnotatorId, image: ImageId },

    #[error("image {0} is not part of the campaign")]
    NotFound(ImageId),

    #[error(transparent)]
    Invalid(#[from] sentiscope_core::Error),

    #[error("journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("journal {path} line {line}: {reason}")]
    CorruptJournal { path: PathBuf, line: usize, reason: String },

    #[error("configuration: {0}")]
    Configuration(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

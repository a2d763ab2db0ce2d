//! Crowd-sourcing campaign service: task selection, durable submission and
//! live statistics behind a small JSON API.

pub mod campaign;
pub mod error;
pub mod http;
pub mod journal;

pub use campaign::{
    Acknowledgement, AnnotationTask, AnnotatorProgress, Campaign, CampaignConfig, CampaignStats, SubmitRequest,
    TagCount, DEFAULT_COVERAGE_TARGET,
};
pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use journal::Journal;

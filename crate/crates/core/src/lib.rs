//! Core algorithms for crowd-sourced visual sentiment analysis of disaster imagery.
//!
//! The crate covers the offline half of the pipeline:
//!
//! * [`types`]: the canonical tag vocabulary and the records exchanged between stages.
//! * [`aggregation`]: tag tallies, co-occurrence counts, label distributions and
//!   majority-vote labels computed from annotator responses.
//! * [`dataset`]: seeded train/validation/evaluation splits, multi-hot encoding and
//!   image preprocessing.
//! * [`model`]: a pluggable convolutional backbone with a replaced sigmoid multi-label
//!   head and per-label binary cross-entropy.
//! * [`training`] and [`evaluation`]: the fine-tuning loop, accuracy metrics and
//!   crowd-vs-model probability reports.

pub mod aggregation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod jsonl;
pub mod model;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    canonical_vocabulary, normalize_tag, AnnotationResponse, AnnotatorId, DisasterType, ImageId,
    ImageRecord, LabelDistribution, MultiHotLabel, TagVocabulary, CANONICAL_TAGS,
};

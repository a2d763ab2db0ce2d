//! In-memory campaign state backed by the journal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentiscope_core::aggregation::{additional_tag_counts, tally_tags};
use sentiscope_core::{AnnotationResponse, AnnotatorId, ImageId, ImageRecord, TagVocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::journal::Journal;

pub const DEFAULT_COVERAGE_TARGET: usize = 5;

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub corpus: Vec<ImageRecord>,
    pub vocabulary: TagVocabulary,
    pub journal_path: PathBuf,
    pub coverage_target: usize,
    /// Base for relative image URIs.
    pub image_root: PathBuf,
    pub allow_additional: bool,
    /// Seeds task sampling.
    pub seed: u64,
}

impl CampaignConfig {
    pub fn new(corpus: Vec<ImageRecord>, vocabulary: TagVocabulary, journal_path: impl Into<PathBuf>) -> Self {
        Self {
            corpus,
            vocabulary,
            journal_path: journal_path.into(),
            coverage_target: DEFAULT_COVERAGE_TARGET,
            image_root: PathBuf::from("."),
            allow_additional: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub image: ImageRecord,
    pub image_url: String,
    pub canonical_tags: Vec<String>,
    pub allow_additional: bool,
}

/// Body accepted by `submit`; the server stamps `submitted_at` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub annotator_id: AnnotatorId,
    pub image_id: ImageId,
    #[serde(default)]
    pub selected_tags: Vec<String>,
    #[serde(default)]
    pub additional_tags: Vec<String>,
    #[serde(default)]
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub annotator_id: AnnotatorId,
    pub image_id: ImageId,
    pub coverage: usize,
    pub total_responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagCount {
    pub tag: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator_id: AnnotatorId,
    pub annotated: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub total_responses: usize,
    pub n_images: usize,
    pub distinct_annotators: usize,
    pub mean_responses_per_image: f64,
    pub min_coverage: usize,
    pub coverage_target: usize,
    pub coverage: BTreeMap<ImageId, usize>,
    /// Canonical tag order.
    pub tag_tally: Vec<TagCount>,
    pub additional_tags: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<AnnotatorProgress>,
}

#[derive(Debug)]
struct State {
    journal: Journal,
    responses: Vec<AnnotationResponse>,
    done: HashMap<AnnotatorId, HashSet<usize>>,
    coverage: Vec<usize>,
}

impl State {
    fn record(&mut self, image: usize, response: AnnotationResponse) {
        self.done
            .entry(response.annotator_id.clone())
            .or_default()
            .insert(image);
        self.coverage[image] += 1;
        self.responses.push(response);
    }

    fn has(&self, annotator: &AnnotatorId, image: usize) -> bool {
        self.done.get(annotator).is_some_and(|s| s.contains(&image))
    }
}

#[derive(Debug)]
pub struct Campaign {
    corpus: Vec<ImageRecord>,
    index: HashMap<ImageId, usize>,
    vocabulary: TagVocabulary,
    coverage_target: usize,
    image_root: PathBuf,
    allow_additional: bool,
    state: RwLock<State>,
    rng: Mutex<ChaCha8Rng>,
}

impl Campaign {
    /// Opens the journal and replays it against the corpus.
    pub fn open(config: CampaignConfig) -> Result<Self> {
        if config.coverage_target == 0 {
            return Err(ServiceError::Configuration("coverage target must be positive".into()));
        }
        let mut index = HashMap::with_capacity(config.corpus.len());
        for (i, rec) in config.corpus.iter().enumerate() {
            if index.insert(rec.image_id.clone(), i).is_some() {
                return Err(ServiceError::Configuration(format!(
                    "image {} appears twice in the corpus",
                    rec.image_id
                )));
            }
        }
        let (journal, stored) = Journal::open(&config.journal_path)?;
        let mut state = State {
            journal,
            responses: Vec::with_capacity(stored.len()),
            done: HashMap::new(),
            coverage: vec![0; config.corpus.len()],
        };
        for resp in stored {
            let image = *index.get(&resp.image_id).ok_or_else(|| {
                ServiceError::Configuration(format!(
                    "journal references image {} which is not in the corpus",
                    resp.image_id
                ))
            })?;
            if state.has(&resp.annotator_id, image) {
                return Err(ServiceError::Configuration(format!(
                    "journal holds two responses by {} for {}",
                    resp.annotator_id, resp.image_id
                )));
            }
            resp.validate(&config.vocabulary)?;
            state.record(image, resp);
        }
        tracing::info!(
            images = config.corpus.len(),
            replayed = state.responses.len(),
            journal = %config.journal_path.display(),
            "campaign opened"
        );
        Ok(Self {
            corpus: config.corpus,
            index,
            vocabulary: config.vocabulary,
            coverage_target: config.coverage_target,
            image_root: config.image_root,
            allow_additional: config.allow_additional,
            state: RwLock::new(state),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
        })
    }

    pub fn corpus(&self) -> &[ImageRecord] {
        &self.corpus
    }

    pub fn vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }

    pub fn journal_path(&self) -> PathBuf {
        self.state.read().journal.path().to_path_buf()
    }

    /// Snapshot of every accepted response in acceptance order.
    pub fn responses(&self) -> Vec<AnnotationResponse> {
        self.state.read().responses.clone()
    }

    /// Picks uniformly among the images this annotator has not seen that have
    /// the lowest coverage. `None` once the annotator has seen every image.
    pub fn next_task(&self, annotator: &AnnotatorId) -> Result<Option<AnnotationTask>> {
        if annotator.as_str().trim().is_empty() {
            return Err(sentiscope_core::Error::Validation("annotator id is empty".into()).into());
        }
        let chosen = {
            let state = self.state.read();
            let eligible: Vec<usize> = (0..self.corpus.len())
                .filter(|&i| !state.has(annotator, i))
                .collect();
            let Some(min) = eligible.iter().map(|&i| state.coverage[i]).min() else {
                return Ok(None);
            };
            let candidates: Vec<usize> = eligible
                .into_iter()
                .filter(|&i| state.coverage[i] == min)
                .collect();
            *candidates.choose(&mut *self.rng.lock()).expect("non-empty")
        };
        let image = self.corpus[chosen].clone();
        Ok(Some(AnnotationTask {
            image_url: format!("/api/images/{}", image.image_id),
            image,
            canonical_tags: self.vocabulary.canonical_tags().to_vec(),
            allow_additional: self.allow_additional,
        }))
    }

    /// Validates, journals and records one response atomically.
    pub fn submit(&self, request: SubmitRequest) -> Result<Acknowledgement> {
        let response = AnnotationResponse {
            annotator_id: request.annotator_id,
            image_id: request.image_id,
            selected_tags: request.selected_tags.into_iter().collect(),
            additional_tags: request.additional_tags.into_iter().collect(),
            submitted_at: request.submitted_at.unwrap_or_else(Utc::now),
        }
        .normalized()?;
        response.validate(&self.vocabulary)?;
        if !self.allow_additional && !response.additional_tags.is_empty() {
            return Err(sentiscope_core::Error::Validation(
                "this campaign does not accept additional tags".into(),
            )
            .into());
        }
        let image = *self
            .index
            .get(&response.image_id)
            .ok_or_else(|| ServiceError::NotFound(response.image_id.clone()))?;

        let mut state = self.state.write();
        if state.has(&response.annotator_id, image) {
            return Err(ServiceError::Conflict {
                annotator: response.annotator_id,
                image: response.image_id,
            });
        }
        state.journal.append(&response)?;
        let ack = Acknowledgement {
            annotator_id: response.annotator_id.clone(),
            image_id: response.image_id.clone(),
            coverage: state.coverage[image] + 1,
            total_responses: state.responses.len() + 1,
        };
        state.record(image, response);
        Ok(ack)
    }

    pub fn stats(&self, annotator: Option<&AnnotatorId>) -> CampaignStats {
        let state = self.state.read();
        let total = state.responses.len();
        let tally = tally_tags(&state.responses, &self.vocabulary)
            .expect("accepted responses only use canonical tags");
        CampaignStats {
            total_responses: total,
            n_images: self.corpus.len(),
            distinct_annotators: state.done.len(),
            mean_responses_per_image: if self.corpus.is_empty() {
                0.0
            } else {
                total as f64 / self.corpus.len() as f64
            },
            min_coverage: state.coverage.iter().copied().min().unwrap_or(0),
            coverage_target: self.coverage_target,
            coverage: self
                .corpus
                .iter()
                .zip(&state.coverage)
                .map(|(r, &c)| (r.image_id.clone(), c))
                .collect(),
            tag_tally: self
                .vocabulary
                .canonical_tags()
                .iter()
                .zip(tally.counts)
                .map(|(tag, count)| TagCount { tag: tag.clone(), count })
                .collect(),
            additional_tags: additional_tag_counts(&state.responses),
            annotator: annotator.map(|a| AnnotatorProgress {
                annotator_id: a.clone(),
                annotated: state.done.get(a).map_or(0, HashSet::len),
                total: self.corpus.len(),
            }),
        }
    }

    /// Filesystem location of an image, if it belongs to the corpus.
    pub fn image_path(&self, image: &ImageId) -> Option<PathBuf> {
        let rec = &self.corpus[*self.index.get(image)?];
        let uri = Path::new(rec.uri.strip_prefix("file://").unwrap_or(&rec.uri));
        Some(if uri.is_absolute() {
            uri.to_path_buf()
        } else {
            self.image_root.join(uri)
        })
    }
}

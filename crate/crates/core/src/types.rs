//! Domain records shared by every pipeline stage.
//!
//! Label vectors everywhere in the crate are indexed by the canonical tag order
//! returned from [`canonical_vocabulary`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven sentiment tags shown to every annotator, in label-vector order.
pub const CANONICAL_TAGS: [&str; 7] = [
    "destruction",
    "happiness",
    "hope",
    "neutral",
    "pain",
    "rescue",
    "shock",
];

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Stable image identifier (a content hash when produced by ingestion).
    ImageId
);
string_id!(
    /// Opaque annotator token.
    AnnotatorId
);

/// Lowercases, collapses internal whitespace runs to one space and trims.
pub fn normalize_tag(raw: &str) -> Result<String> {
    let collapsed = raw
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    if collapsed.is_empty() {
        return Err(Error::validation("tag is empty after trimming"));
    }
    Ok(collapsed)
}

/// Append-only tag vocabulary: the fixed canonical tags followed by any promoted
/// free-text tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary")]
pub struct TagVocabulary {
    canonical_tags: Vec<String>,
    extended_tags: Vec<String>,
}

#[derive(Deserialize)]
struct RawVocabulary {
    canonical_tags: Vec<String>,
    #[serde(default)]
    extended_tags: Vec<String>,
}

impl TryFrom<RawVocabulary> for TagVocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        if raw.canonical_tags.iter().map(String::as_str).ne(CANONICAL_TAGS) {
            return Err(Error::validation(format!(
                "canonical tags must be exactly {CANONICAL_TAGS:?}, got {:?}",
                raw.canonical_tags
            )));
        }
        let mut vocab = canonical_vocabulary();
        for tag in raw.extended_tags {
            if normalize_tag(&tag)? != tag {
                return Err(Error::validation(format!("extended tag {tag:?} is not normalized")));
            }
            if vocab.index(&tag).is_some() {
                return Err(Error::validation(format!("duplicate tag {tag:?}")));
            }
            vocab.extended_tags.push(tag);
        }
        Ok(vocab)
    }
}

/// The canonical seven-tag vocabulary with no extensions.
pub fn canonical_vocabulary() -> TagVocabulary {
    TagVocabulary {
        canonical_tags: CANONICAL_TAGS.iter().map(|t| t.to_string()).collect(),
        extended_tags: Vec::new(),
    }
}

impl Default for TagVocabulary {
    fn default() -> Self {
        canonical_vocabulary()
    }
}

impl TagVocabulary {
    pub fn canonical_tags(&self) -> &[String] {
        &self.canonical_tags
    }

    pub fn extended_tags(&self) -> &[String] {
        &self.extended_tags
    }

    /// Number of canonical tags, i.e. the label-vector length.
    pub fn canonical_len(&self) -> usize {
        self.canonical_tags.len()
    }

    pub fn len(&self) -> usize {
        self.canonical_tags.len() + self.extended_tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All tags in index order.
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.canonical_tags
            .iter()
            .chain(&self.extended_tags)
            .map(String::as_str)
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.tags().position(|t| t == tag)
    }

    pub fn canonical_index(&self, tag: &str) -> Option<usize> {
        self.canonical_tags.iter().position(|t| t == tag)
    }

    pub fn is_canonical(&self, tag: &str) -> bool {
        self.canonical_index(tag).is_some()
    }

    /// Promotes a free-text tag into the extended vocabulary and returns its index.
    /// Promoting an existing tag returns the index it already has.
    pub fn promote(&mut self, raw: &str) -> Result<usize> {
        let tag = normalize_tag(raw)?;
        if let Some(idx) = self.index(&tag) {
            return Ok(idx);
        }
        self.extended_tags.push(tag);
        Ok(self.len() - 1)
    }
}

/// The six disaster categories of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisasterType {
    Earthquakes,
    Floods,
    Droughts,
    Landslides,
    Thunderstorms,
    Wildfires,
}

impl DisasterType {
    pub const ALL: [DisasterType; 6] = [
        DisasterType::Earthquakes,
        DisasterType::Floods,
        DisasterType::Droughts,
        DisasterType::Landslides,
        DisasterType::Thunderstorms,
        DisasterType::Wildfires,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DisasterType::Earthquakes => "earthquakes",
            DisasterType::Floods => "floods",
            DisasterType::Droughts => "droughts",
            DisasterType::Landslides => "landslides",
            DisasterType::Thunderstorms => "thunderstorms",
            DisasterType::Wildfires => "wildfires",
        }
    }
}

impl fmt::Display for DisasterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DisasterType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_lowercase();
        DisasterType::ALL
            .into_iter()
            .find(|d| d.as_str() == wanted)
            .ok_or_else(|| Error::validation(format!("unknown disaster type {s:?}")))
    }
}

/// One image of the corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub uri: String,
    pub disaster_type: DisasterType,
}

/// One annotator's tag selection for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub annotator_id: AnnotatorId,
    pub image_id: ImageId,
    pub selected_tags: BTreeSet<String>,
    #[serde(default)]
    pub additional_tags: BTreeSet<String>,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationResponse {
    /// Normalizes every tag. Fails on tags that are empty after trimming.
    pub fn normalized(mut self) -> Result<Self> {
        self.selected_tags = self
            .selected_tags
            .iter()
            .map(|t| normalize_tag(t))
            .collect::<Result<_>>()?;
        self.additional_tags = self
            .additional_tags
            .iter()
            .map(|t| normalize_tag(t))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    /// Checks the record invariants against `vocab`. Tags must already be normalized.
    pub fn validate(&self, vocab: &TagVocabulary) -> Result<()> {
        if self.annotator_id.as_str().trim().is_empty() {
            return Err(Error::validation("annotator_id is empty"));
        }
        if self.image_id.as_str().trim().is_empty() {
            return Err(Error::validation("image_id is empty"));
        }
        if self.selected_tags.is_empty() && self.additional_tags.is_empty() {
            return Err(Error::validation("response selects no tags"));
        }
        if let Some(bad) = self.selected_tags.iter().find(|t| !vocab.is_canonical(t)) {
            return Err(Error::validation(format!("{bad:?} is not a canonical tag")));
        }
        for tag in &self.additional_tags {
            if normalize_tag(tag)? != *tag {
                return Err(Error::validation(format!("additional tag {tag:?} is not normalized")));
            }
        }
        Ok(())
    }
}

/// Per-tag fraction of an image's annotators who selected the tag, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub image_id: ImageId,
    pub fractions: Vec<f64>,
}

impl LabelDistribution {
    pub fn fraction(&self, vocab: &TagVocabulary, tag: &str) -> Option<f64> {
        vocab.canonical_index(tag).map(|i| self.fractions[i])
    }
}

/// Binary training label, one bit per canonical tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiHotLabel {
    pub image_id: ImageId,
    pub bits: Vec<bool>,
}

impl MultiHotLabel {
    /// Builds a label from tag names. Unknown tags are rejected.
    pub fn from_tags<'a>(
        image_id: ImageId,
        vocab: &TagVocabulary,
        tags: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut bits = vec![false; vocab.canonical_len()];
        for tag in tags {
            let idx = vocab
                .canonical_index(tag)
                .ok_or_else(|| Error::validation(format!("{tag:?} is not a canonical tag")))?;
            bits[idx] = true;
        }
        Ok(Self { image_id, bits })
    }

    pub fn tags<'v>(&self, vocab: &'v TagVocabulary) -> Vec<&'v str> {
        vocab
            .canonical_tags()
            .iter()
            .zip(&self.bits)
            .filter(|(_, &on)| on)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

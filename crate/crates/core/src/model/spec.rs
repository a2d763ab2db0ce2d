use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel normalization applied after scaling pixel values to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub const HALF: Normalization = Normalization {
        mean: [0.5; 3],
        std: [0.5; 3],
    };
}

/// Where backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSource {
    /// Seeded random initialization; only the built-in tiny architecture supports it.
    Random { seed: u64 },
    /// A network weights file in the sequential-layer JSON format.
    Checkpoint { path: PathBuf },
    /// A pretrained family whose weights file has not been supplied yet.
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    /// `(height, width)` the backbone expects.
    pub input_resolution: (usize, usize),
    pub feature_dim: usize,
    pub normalization: Normalization,
    pub weights_source: WeightsSource,
}

pub const TINY: &str = "tiny";

/// Names accepted by [`BackboneSpec::named`].
pub const KNOWN_BACKBONES: [&str; 5] = [TINY, "alexnet", "vggnet", "resnet", "inception-v3"];

impl BackboneSpec {
    /// Small random-weight backbone used for tests and synthetic runs.
    pub fn tiny(seed: u64) -> Self {
        Self {
            name: TINY.into(),
            input_resolution: (16, 16),
            feature_dim: 64,
            normalization: Normalization::HALF,
            weights_source: WeightsSource::Random { seed },
        }
    }

    /// Looks up a backbone family by name. Pretrained families come back with
    /// [`WeightsSource::Unspecified`]; attach a file with [`BackboneSpec::with_weights`].
    pub fn named(name: &str) -> Result<Self> {
        let family = |input: usize, feature_dim: usize| Self {
            name: name.to_owned(),
            input_resolution: (input, input),
            feature_dim,
            normalization: Normalization::IMAGENET,
            weights_source: WeightsSource::Unspecified,
        };
        Ok(match name {
            TINY => Self::tiny(0),
            "alexnet" => family(224, 4096),
            "vggnet" => family(224, 4096),
            "resnet" => family(224, 2048),
            "inception-v3" => family(299, 2048),
            other => {
                return Err(Error::Configuration(format!(
                    "unknown backbone {other:?}; known: {KNOWN_BACKBONES:?}"
                )))
            }
        })
    }

    pub fn with_weights(mut self, path: impl Into<PathBuf>) -> Self {
        self.weights_source = WeightsSource::Checkpoint { path: path.into() };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_resolution;
        if h == 0 || w == 0 {
            return Err(Error::Configuration(format!("backbone {} has zero resolution", self.name)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Configuration(format!("backbone {} has zero feature_dim", self.name)));
        }
        if self.normalization.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Configuration(format!(
                "backbone {} has non-positive normalization std",
                self.name
            )));
        }
        Ok(())
    }
}

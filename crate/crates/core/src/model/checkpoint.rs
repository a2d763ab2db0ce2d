//! Self-describing model checkpoint container.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::head::{Head, OutputActivation};
use super::network::Network;
use super::sentiment::{load_backbone, FreezePolicy, SentimentModel};
use super::spec::{BackboneSpec, WeightsSource};
use crate::error::{Error, Result};
use crate::types::TagVocabulary;

pub const CHECKPOINT_FORMAT: &str = "sentiscope-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Backbone weights are embedded unless they are unchanged pretrained weights
/// that can be re-read from their original file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneWeights {
    Inline { network: Network },
    Reference { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub optimizer: String,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub backbone_spec: BackboneSpec,
    pub vocabulary: TagVocabulary,
    pub freeze_policy: FreezePolicy,
    pub activation: OutputActivation,
    pub head: Head,
    pub backbone: BackboneWeights,
    pub training: Option<TrainingMetadata>,
}

impl Checkpoint {
    pub fn from_model(model: &SentimentModel, training: Option<TrainingMetadata>) -> Self {
        let (spec, vocab, network, head) = model.parts();
        let backbone = match (&spec.weights_source, model.freeze_policy()) {
            (WeightsSource::Checkpoint { path }, FreezePolicy::HeadOnly) => {
                BackboneWeights::Reference { path: path.clone() }
            }
            _ => BackboneWeights::Inline {
                network: network.clone(),
            },
        };
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            backbone_spec: spec.clone(),
            vocabulary: vocab.clone(),
            freeze_policy: model.freeze_policy(),
            activation: model.activation(),
            head: head.clone(),
            backbone,
            training,
        }
    }

    pub fn into_model(self) -> Result<(SentimentModel, Option<TrainingMetadata>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Configuration(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let network = match self.backbone {
            BackboneWeights::Inline { mut network } => {
                network.make_contiguous();
                network
            }
            BackboneWeights::Reference { path } => {
                let mut spec = self.backbone_spec.clone();
                spec.weights_source = WeightsSource::Checkpoint { path };
                load_backbone(&spec)?
            }
        };
        let mut head = self.head;
        head.weight = head.weight.as_standard_layout().into_owned();
        head.bias = head.bias.as_standard_layout().into_owned();
        let mut model = SentimentModel::from_parts(
            self.backbone_spec,
            self.vocabulary,
            network,
            head,
            self.freeze_policy,
        )?;
        model.set_activation(self.activation);
        Ok((model, self.training))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Load {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Load {
            path: path.to_owned(),
            reason: format!("not a checkpoint: {e}"),
        })
    }
}

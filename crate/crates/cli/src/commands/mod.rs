pub mod aggregate;
pub mod evaluate;
pub mod ingest;
pub mod predict;
pub mod serve;
pub mod split;
pub mod train;

use sentiscope_core::model::spec::TINY;
use sentiscope_core::model::BackboneSpec;

use crate::config::CliConfig;
use crate::error::{CliError, Result};

pub fn backbone_spec(cfg: &CliConfig) -> Result<BackboneSpec> {
    let spec = if cfg.backbone == TINY {
        BackboneSpec::tiny(cfg.seed)
    } else {
        BackboneSpec::named(&cfg.backbone)?
    };
    match &cfg.weights {
        Some(w) => Ok(spec.with_weights(w)),
        None if cfg.backbone != TINY => Err(CliError::Invalid(format!(
            "backbone {} needs pretrained weights; pass --weights <network.json>",
            cfg.backbone
        ))),
        None => Ok(spec),
    }
}

use std::collections::HashMap;

use sentiscope_core::aggregation::MajorityLabel;
use sentiscope_core::dataset::{build_examples, DatasetSplit};
use sentiscope_core::model::{Checkpoint, SentimentModel};
use sentiscope_core::training::{train, TrainConfig};
use sentiscope_core::{canonical_vocabulary, ImageId, MultiHotLabel};

use super::backbone_spec;
use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::workspace::{self as ws, create_file, load_labels, load_manifest, load_split};

/// Labels for `ids`, in order. Every id must have been labelled by `aggregate`.
pub fn labels_for(ids: &[ImageId], labels: &[MajorityLabel]) -> Result<Vec<MultiHotLabel>> {
    let by_id: HashMap<&ImageId, &MultiHotLabel> = labels.iter().map(|l| (&l.label.image_id, &l.label)).collect();
    ids.iter()
        .map(|id| {
            by_id.get(id).map(|l| (*l).clone()).ok_or_else(|| {
                CliError::Invalid(format!(
                    "image {id} from the split has no majority label; rerun `sentiscope split`"
                ))
            })
        })
        .collect()
}

pub fn run(cfg: &CliConfig) -> Result<()> {
    let vocab = canonical_vocabulary();
    let DatasetSplit { train: train_ids, validation: val_ids, .. } = load_split(&cfg.workspace)?;
    let labels = load_labels(&cfg.workspace, &vocab)?;
    let records = load_manifest(&cfg.manifest_path())?;
    let spec = backbone_spec(cfg)?;

    let train_set = build_examples(&records, &labels_for(&train_ids, &labels)?, &spec)?;
    let val_set = build_examples(&records, &labels_for(&val_ids, &labels)?, &spec)?;
    let model = SentimentModel::build(spec, &vocab, cfg.freeze_policy, cfg.seed)?;
    let config = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let outcome = train(model, &train_set, &val_set, &config)?;

    let checkpoint_path = cfg.workspace.join(ws::CHECKPOINT);
    create_file(&checkpoint_path)?;
    Checkpoint::from_model(&outcome.model, Some(outcome.metadata.clone())).save(&checkpoint_path)?;
    let history_path = cfg.workspace.join(ws::HISTORY);
    outcome.history.write_csv(create_file(&history_path)?)?;

    let best = outcome.history.best();
    println!(
        "trained {} epochs on {} images ({} validation); kept epoch {} with {} loss {:.4}, train accuracy {:.2}% -> {}",
        outcome.metadata.epochs_run,
        train_set.len(),
        val_set.len(),
        best.epoch,
        if best.val_loss.is_some() { "validation" } else { "training" },
        outcome.metadata.best_val_loss,
        best.train_acc,
        checkpoint_path.display()
    );
    Ok(())
}

use clap::Args;
use sentiscope_core::canonical_vocabulary;
use sentiscope_core::dataset::{split, split_stratified};

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::workspace::{self as ws, load_labels, load_manifest, write_bytes};

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Balance disaster types across the three partitions.
    #[arg(long)]
    pub stratify: bool,

    /// Keep images where no tag reached a majority.
    #[arg(long)]
    pub include_no_majority: bool,
}

pub fn run(cfg: &CliConfig, args: &SplitArgs) -> Result<()> {
    let labels = load_labels(&cfg.workspace, &canonical_vocabulary())?;
    let ids: Vec<_> = labels
        .iter()
        .filter(|l| args.include_no_majority || !l.no_majority)
        .map(|l| l.label.image_id.clone())
        .collect();
    let result = if args.stratify {
        let records = load_manifest(&cfg.manifest_path())?;
        let typed = ids
            .iter()
            .map(|id| {
                records
                    .get(id)
                    .map(|r| (id.clone(), r.disaster_type))
                    .ok_or_else(|| CliError::Invalid(format!("labelled image {id} is missing from the manifest")))
            })
            .collect::<Result<Vec<_>>>()?;
        split_stratified(&typed, cfg.seed)?
    } else {
        split(&ids, cfg.seed)?
    };
    let path = cfg.workspace.join(ws::SPLIT);
    let mut json = serde_json::to_vec_pretty(&result).expect("split serializes");
    json.push(b'\n');
    write_bytes(&path, &json)?;
    println!(
        "split {} images with seed {}: {} train, {} validation, {} evaluation -> {}",
        result.len(),
        cfg.seed,
        result.train.len(),
        result.validation.len(),
        result.evaluation.len(),
        path.display()
    );
    Ok(())
}

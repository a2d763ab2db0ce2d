use sentiscope_core::dataset::build_examples;
use sentiscope_core::evaluation::{build_report, write_report_csv, ReportSummary};
use sentiscope_core::model::Checkpoint;

use super::train::labels_for;
use crate::config::CliConfig;
use crate::error::Result;
use crate::workspace::{self as ws, create_file, load_distributions, load_labels, load_manifest, load_split, require, write_bytes};

pub fn run(cfg: &CliConfig) -> Result<()> {
    let checkpoint_path = cfg.workspace.join(ws::CHECKPOINT);
    require(&checkpoint_path, "model checkpoint", "train")?;
    let (model, _) = Checkpoint::load(&checkpoint_path)?.into_model()?;
    let vocab = model.vocabulary().clone();
    let split = load_split(&cfg.workspace)?;
    let labels = load_labels(&cfg.workspace, &vocab)?;
    let distributions = load_distributions(&cfg.workspace, &vocab)?;
    let records = load_manifest(&cfg.manifest_path())?;

    let eval_set = build_examples(&records, &labels_for(&split.evaluation, &labels)?, model.spec())?;
    let report = build_report(&model, &eval_set, &distributions, cfg.train.threshold)?;

    let report_path = cfg.workspace.join(ws::REPORT);
    write_report_csv(create_file(&report_path)?, &vocab, &report)?;
    let summary = ReportSummary::new(&vocab, &report);
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    write_bytes(&cfg.workspace.join(ws::SUMMARY), &json)?;

    let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.2}%"));
    println!(
        "evaluated {} images at threshold {}: per-label accuracy {}, subset accuracy {} -> {}",
        summary.n_images,
        summary.threshold,
        pct(summary.overall_accuracy),
        pct(summary.subset_accuracy),
        report_path.display()
    );
    if !summary.incomplete_images.is_empty() {
        tracing::warn!(count = summary.incomplete_images.len(), "images without a crowd distribution");
    }
    Ok(())
}

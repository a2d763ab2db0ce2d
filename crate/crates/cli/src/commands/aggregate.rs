use clap::Args;
use sentiscope_core::aggregation::{
    aggregate_campaign, write_additional_tags_csv, write_cooccurrence_csv, write_distributions_csv,
    write_labels_csv, write_tally_csv, VoteOptions,
};
use sentiscope_core::{canonical_vocabulary, jsonl, AnnotationResponse};

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::workspace::{self as ws, create_file, require};

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Responses an image needs before it receives a majority label.
    #[arg(long, env = "SENTISCOPE_COVERAGE_TARGET")]
    pub coverage_target: Option<usize>,

    /// Label images that are below the coverage target too.
    #[arg(long)]
    pub force: bool,
}

pub fn run(cfg: &CliConfig, args: &AggregateArgs) -> Result<()> {
    let journal = cfg.journal_path();
    require(&journal, "annotation journal", "serve")?;
    let responses: Vec<AnnotationResponse> = jsonl::read(&journal)?;
    if responses.is_empty() {
        return Err(CliError::Invalid(format!("{} holds no responses", journal.display())));
    }
    let vocab = canonical_vocabulary();
    let opts = VoteOptions {
        coverage_target: cfg.coverage_target,
        force: args.force,
    };
    let agg = aggregate_campaign(&responses, &vocab, opts)?;

    let dir = &cfg.workspace;
    write_tally_csv(create_file(&dir.join(ws::TALLY))?, &vocab, &agg.tally)?;
    write_cooccurrence_csv(create_file(&dir.join(ws::COOCCURRENCE))?, &vocab, &agg.cooccurrence)?;
    write_distributions_csv(create_file(&dir.join(ws::DISTRIBUTIONS))?, &vocab, &agg.distributions)?;
    write_labels_csv(create_file(&dir.join(ws::LABELS))?, &vocab, &agg.labels)?;
    write_additional_tags_csv(create_file(&dir.join(ws::ADDITIONAL_TAGS))?, &agg.additional_tags)?;

    let no_majority = agg.labels.iter().filter(|l| l.no_majority).count();
    println!(
        "aggregated {} responses over {} images: {} labelled ({} without a majority tag), {} below coverage target {}",
        responses.len(),
        agg.distributions.len(),
        agg.labels.len(),
        no_majority,
        agg.under_covered.len(),
        cfg.coverage_target
    );
    for (image, n) in &agg.under_covered {
        tracing::warn!(%image, responses = n, "image below coverage target left unlabelled");
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;
mod config;
mod error;
mod workspace;

use config::{load_config_file, CliConfig};
use error::Result;

/// Visual sentiment analysis of disaster imagery: crowd annotation, label
/// aggregation and multi-label model training.
#[derive(Debug, Parser)]
#[command(name = "sentiscope", version)]
struct Cli {
    /// Directory holding every pipeline artifact.
    #[arg(long, global = true, env = "SENTISCOPE_WORKSPACE")]
    workspace: Option<PathBuf>,

    #[arg(long, global = true, env = "SENTISCOPE_SEED")]
    seed: Option<u64>,

    /// tiny, alexnet, vggnet, resnet or inception-v3.
    #[arg(long, global = true, env = "SENTISCOPE_BACKBONE")]
    backbone: Option<String>,

    /// `key = value` settings file; flags and environment variables take precedence.
    #[arg(long, global = true, env = "SENTISCOPE_CONFIG")]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "SENTISCOPE_MANIFEST")]
    manifest: Option<PathBuf>,

    #[arg(long, global = true, env = "SENTISCOPE_JOURNAL")]
    journal: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the corpus manifest from a directory of images.
    Ingest(commands::ingest::IngestArgs),
    /// Run the annotation campaign web service.
    Serve(commands::serve::ServeArgs),
    /// Turn the annotation journal into tallies, co-occurrences, distributions and labels.
    Aggregate(commands::aggregate::AggregateArgs),
    /// Partition labelled images into training, validation and evaluation sets.
    Split(commands::split::SplitArgs),
    /// Fine-tune the sentiment model on the training set.
    Train(TrainArgs),
    /// Score the model on the evaluation set and write the crowd-vs-model report.
    Evaluate(EvaluateArgs),
    /// Print per-tag probabilities for images.
    Predict(commands::predict::PredictArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "SENTISCOPE_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "SENTISCOPE_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "SENTISCOPE_LEARNING_RATE")]
    learning_rate: Option<f64>,
    /// sgd-momentum or adaptive.
    #[arg(long, env = "SENTISCOPE_OPTIMIZER")]
    optimizer: Option<String>,
    #[arg(long, env = "SENTISCOPE_MOMENTUM")]
    momentum: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, env = "SENTISCOPE_EARLY_STOP_PATIENCE")]
    early_stop_patience: Option<usize>,
    #[arg(long, env = "SENTISCOPE_THRESHOLD")]
    threshold: Option<f64>,
    /// head-only or full-fine-tune.
    #[arg(long, env = "SENTISCOPE_FREEZE_POLICY")]
    freeze_policy: Option<String>,
    /// Backbone network weights (JSON) for the pretrained families.
    #[arg(long, env = "SENTISCOPE_WEIGHTS")]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "SENTISCOPE_THRESHOLD")]
    threshold: Option<f64>,
}

fn overrides(cli: &Cli) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let mut push = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k, v));
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    push("workspace", path(&cli.workspace));
    push("seed", cli.seed.map(|s| s.to_string()));
    push("backbone", cli.backbone.clone());
    push("manifest", path(&cli.manifest));
    push("journal", path(&cli.journal));
    match &cli.command {
        Command::Serve(a) => {
            push("bind", a.bind.clone());
            push("coverage_target", a.coverage_target.map(|v| v.to_string()));
        }
        Command::Aggregate(a) => push("coverage_target", a.coverage_target.map(|v| v.to_string())),
        Command::Train(a) => {
            push("epochs", a.epochs.map(|v| v.to_string()));
            push("batch_size", a.batch_size.map(|v| v.to_string()));
            push("learning_rate", a.learning_rate.map(|v| v.to_string()));
            push("optimizer", a.optimizer.clone());
            push("momentum", a.momentum.map(|v| v.to_string()));
            push("early_stop_patience", a.early_stop_patience.map(|v| v.to_string()));
            push("threshold", a.threshold.map(|v| v.to_string()));
            push("freeze_policy", a.freeze_policy.clone());
            push("weights", path(&a.weights));
        }
        Command::Evaluate(a) => push("threshold", a.threshold.map(|v| v.to_string())),
        Command::Ingest(_) | Command::Split(_) | Command::Predict(_) => {}
    }
    out
}

fn resolve_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = CliConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply(&load_config_file(path)?)?;
    }
    for (k, v) in overrides(cli) {
        cfg.set(k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Ingest(args) => commands::ingest::run(&cfg, &args),
        Command::Serve(args) => commands::serve::run(&cfg, &args),
        Command::Aggregate(args) => commands::aggregate::run(&cfg, &args),
        Command::Split(args) => commands::split::run(&cfg, &args),
        Command::Train(_) => commands::train::run(&cfg),
        Command::Evaluate(_) => commands::evaluate::run(&cfg),
        Command::Predict(args) => commands::predict::run(&cfg, &args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("SENTISCOPE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}


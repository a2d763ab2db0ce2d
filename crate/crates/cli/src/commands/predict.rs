use std::path::PathBuf;

use clap::Args;
use sentiscope_core::dataset::preprocess_file;
use sentiscope_core::model::Checkpoint;
use serde::Serialize;

use crate::config::CliConfig;
use crate::error::Result;
use crate::workspace::{self as ws, require, write_bytes};

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(required = true)]
    pub images: Vec<PathBuf>,

    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Prediction {
    image: String,
    /// Tag to probability.
    probabilities: serde_json::Map<String, serde_json::Value>,
}

pub fn run(cfg: &CliConfig, args: &PredictArgs) -> Result<()> {
    let checkpoint_path = cfg.workspace.join(ws::CHECKPOINT);
    require(&checkpoint_path, "model checkpoint", "train")?;
    let (model, _) = Checkpoint::load(&checkpoint_path)?.into_model()?;
    let pixels = args
        .images
        .iter()
        .map(|p| preprocess_file(p, model.spec()))
        .collect::<sentiscope_core::Result<Vec<_>>>()?;
    let probs = model.predict(&pixels)?;
    let predictions: Vec<Prediction> = args
        .images
        .iter()
        .enumerate()
        .map(|(i, path)| Prediction {
            image: path.to_string_lossy().into_owned(),
            probabilities: model
                .vocabulary()
                .canonical_tags()
                .iter()
                .zip(probs.row(i))
                .map(|(tag, &p)| (tag.clone(), serde_json::Value::from(p)))
                .collect(),
        })
        .collect();
    let mut json = serde_json::to_vec_pretty(&predictions).expect("predictions serialize");
    json.push(b'\n');
    match &args.output {
        Some(path) => write_bytes(path, &json),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&json)
                .map_err(crate::error::CliError::io("writing predictions"))
        }
    }
}

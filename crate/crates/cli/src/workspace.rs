//! Fixed artifact locations inside a workspace directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use sentiscope_core::aggregation::{read_distributions_csv, read_labels_csv, MajorityLabel};
use sentiscope_core::dataset::DatasetSplit;
use sentiscope_core::{jsonl, ImageId, ImageRecord, LabelDistribution, TagVocabulary};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const SKIP_REPORT: &str = "ingest_skipped.csv";
pub const JOURNAL: &str = "annotations.jsonl";
pub const TALLY: &str = "aggregate/tag_tally.csv";
pub const COOCCURRENCE: &str = "aggregate/cooccurrence.csv";
pub const DISTRIBUTIONS: &str = "aggregate/distributions.csv";
pub const LABELS: &str = "aggregate/labels.csv";
pub const ADDITIONAL_TAGS: &str = "aggregate/additional_tags.csv";
pub const SPLIT: &str = "split.json";
pub const CHECKPOINT: &str = "model/checkpoint.json";
pub const HISTORY: &str = "model/history.csv";
pub const REPORT: &str = "report/report.csv";
pub const SUMMARY: &str = "report/summary.json";

/// Fails with the subcommand that produces `path` when it does not exist.
pub fn require(path: &Path, what: &'static str, prior: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            what,
            path: path.to_path_buf(),
            prior,
        })
    }
}

pub fn create_file(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(format!("creating {}", parent.display())))?;
    }
    fs::File::create(path).map_err(CliError::io(format!("creating {}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    create_file(path)?
        .write_all(bytes)
        .map_err(CliError::io(format!("writing {}", path.display())))
}

fn open(path: &Path, what: &'static str, prior: &'static str) -> Result<fs::File> {
    require(path, what, prior)?;
    fs::File::open(path).map_err(CliError::io(format!("opening {}", path.display())))
}

/// Manifest records keyed by id, with relative URIs resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<HashMap<ImageId, ImageRecord>> {
    require(path, "corpus manifest", "ingest")?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let records: Vec<ImageRecord> = jsonl::read(path)?;
    Ok(records
        .into_iter()
        .map(|mut r| {
            r.uri = resolve(&base, &r.uri).to_string_lossy().into_owned();
            (r.image_id.clone(), r)
        })
        .collect())
}

pub fn resolve(base: &Path, uri: &str) -> PathBuf {
    let p = Path::new(uri);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_labels(workspace: &Path, vocab: &TagVocabulary) -> Result<Vec<MajorityLabel>> {
    let path = workspace.join(LABELS);
    Ok(read_labels_csv(open(&path, "majority labels", "aggregate")?, vocab)?)
}

pub fn load_distributions(workspace: &Path, vocab: &TagVocabulary) -> Result<HashMap<ImageId, LabelDistribution>> {
    let path = workspace.join(DISTRIBUTIONS);
    Ok(read_distributions_csv(open(&path, "label distributions", "aggregate")?, vocab)?
        .into_iter()
        .map(|d| (d.image_id.clone(), d))
        .collect())
}

pub fn load_split(workspace: &Path) -> Result<DatasetSplit> {
    let path = workspace.join(SPLIT);
    serde_json::from_reader(open(&path, "split manifest", "split")?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

//! Settings resolved from defaults, an optional `key = value` file, environment
//! variables and flags, in increasing order of precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sentiscope_core::model::FreezePolicy;
use sentiscope_core::training::{OptimizerKind, TrainConfig};

use crate::error::{CliError, Result};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub workspace: PathBuf,
    /// Defaults to `<workspace>/manifest.jsonl`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `<workspace>/annotations.jsonl`.
    pub journal: Option<PathBuf>,
    pub seed: u64,
    pub backbone: String,
    pub weights: Option<PathBuf>,
    pub bind: String,
    pub coverage_target: usize,
    pub freeze_policy: FreezePolicy,
    pub train: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("."),
            manifest: None,
            journal: None,
            seed: 0,
            backbone: sentiscope_core::model::spec::TINY.to_string(),
            weights: None,
            bind: DEFAULT_BIND.to_string(),
            coverage_target: sentiscope_service::DEFAULT_COVERAGE_TARGET,
            freeze_policy: FreezePolicy::HeadOnly,
            train: TrainConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "workspace",
    "manifest",
    "journal",
    "seed",
    "backbone",
    "weights",
    "bind",
    "coverage_target",
    "freeze_policy",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "momentum",
    "early_stop_patience",
    "threshold",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Invalid(format!("config key {key}: cannot parse {value:?}: {e}")))
}

impl CliConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "workspace" => self.workspace = PathBuf::from(value),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "journal" => self.journal = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "backbone" => self.backbone = value.to_string(),
            "weights" => self.weights = Some(PathBuf::from(value)),
            "bind" => self.bind = value.to_string(),
            "coverage_target" => self.coverage_target = parse(key, value)?,
            "freeze_policy" => self.freeze_policy = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "optimizer" => self.train.optimizer = parse::<OptimizerKind>(key, value)?,
            "momentum" => self.train.momentum = parse(key, value)?,
            "early_stop_patience" => self.train.early_stop_patience = parse(key, value)?,
            "threshold" => self.train.threshold = parse(key, value)?,
            other => {
                return Err(CliError::Invalid(format!(
                    "unknown config key {other:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn validate(&self) -> Result<()> {
        if self.coverage_target == 0 {
            return Err(CliError::Invalid("coverage_target must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.workspace.join(crate::workspace::MANIFEST))
    }

    pub fn journal_path(&self) -> PathBuf {
        self.journal
            .clone()
            .unwrap_or_else(|| self.workspace.join(crate::workspace::JOURNAL))
    }
}

/// Parses `key = value` lines. `#` starts a comment line; keys may use `-` or `_`.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Invalid(format!("{} line {}: expected key = value", origin.display(), n + 1))
        })?;
        let key = key.trim().replace('-', "_");
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            return Err(CliError::Invalid(format!("{} line {}: empty key", origin.display(), n + 1)));
        }
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(CliError::Invalid(format!(
                "{} line {}: {key} set twice",
                origin.display(),
                n + 1
            )));
        }
    }
    Ok(out)
}

pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading config {}", path.display())))?;
    parse_config(&text, path)
}

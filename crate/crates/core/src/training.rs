//! Fine-tuning loop with best-by-validation retention and early stopping.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Example, Pixels};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, targets_matrix};
use crate::model::{bce_loss, FreezePolicy, SentimentModel, TrainingMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Stochastic gradient descent with heavy-ball momentum.
    SgdMomentum,
    /// Adam.
    Adaptive,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adaptive" | "adam" => Ok(OptimizerKind::Adaptive),
            other => Err(Error::Configuration(format!(
                "unknown optimizer {other:?}; use sgd-momentum or adaptive"
            ))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd-momentum",
            OptimizerKind::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement; 0 disables.
    pub early_stop_patience: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            seed: 0,
            early_stop_patience: 10,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves every parameter unchanged.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Configuration("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Configuration("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Configuration(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Configuration(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Configuration(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were retained.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                opt(e.val_loss),
                e.train_acc.to_string(),
                opt(e.val_acc),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from [`History::best_epoch`].
    pub model: SentimentModel,
    pub history: History,
    pub metadata: TrainingMetadata,
}

enum Optimizer {
    Sgd { momentum: f64, velocity: Vec<Vec<f64>> },
    Adam { m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: i32 },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, momentum: f64, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        match kind {
            OptimizerKind::SgdMomentum => Optimizer::Sgd {
                momentum,
                velocity: zeros(),
            },
            OptimizerKind::Adaptive => Optimizer::Adam {
                m: zeros(),
                v: zeros(),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        match self {
            Optimizer::Sgd { momentum, velocity } => {
                for ((p, g), vel) in params.into_iter().zip(grads).zip(velocity.iter_mut()) {
                    for ((p, &g), v) in p.iter_mut().zip(g).zip(vel.iter_mut()) {
                        *v = *momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Inputs to the loss: cached features when the backbone is frozen, raw pixels otherwise.
enum Inputs {
    Features(Array2<f64>),
    Pixels(Vec<Pixels>),
}

impl Inputs {
    fn new(model: &SentimentModel, set: &[Example]) -> Result<Self> {
        let pixels: Vec<Pixels> = set.iter().map(|e| e.pixels.clone()).collect();
        Ok(match model.freeze_policy() {
            FreezePolicy::HeadOnly => Inputs::Features(model.features(&pixels)?),
            FreezePolicy::FullFineTune => Inputs::Pixels(pixels),
        })
    }

    fn probabilities(&self, model: &SentimentModel) -> Result<Array2<f64>> {
        match self {
            Inputs::Features(f) => model.probabilities_from_features(f),
            Inputs::Pixels(p) => model.predict(p),
        }
    }
}

fn evaluate(model: &SentimentModel, inputs: &Inputs, targets: &Array2<f64>, threshold: f64) -> Result<(f64, f64)> {
    let probs = inputs.probabilities(model)?;
    Ok((bce_loss(&probs, targets)?, accuracy(&probs, targets, threshold)?))
}

fn ensure_finite(value: f64, epoch: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            detail: format!("{what} is {value}"),
        })
    }
}

/// Minimizes per-label binary cross-entropy over `train_set` and returns the
/// parameters with the lowest validation loss (training loss when `val_set` is
/// empty). Results are reproducible for a fixed seed.
pub fn train(
    mut model: SentimentModel,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let n_tags = model.n_outputs();
    let train_targets = targets_matrix(train_set, n_tags)?;
    let val_targets = targets_matrix(val_set, n_tags)?;
    let train_inputs = Inputs::new(&model, train_set)?;
    let val_inputs = Inputs::new(&model, val_set)?;

    let sizes: Vec<usize> = model.trainable_parameters().iter().map(|p| p.len()).collect();
    let mut optimizer = Optimizer::new(config.optimizer, config.momentum, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, SentimentModel)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let targets = train_targets.select(Axis(0), batch);
            let (loss, grads) = match &train_inputs {
                Inputs::Features(f) => model.head_gradients(&f.select(Axis(0), batch), &targets)?,
                Inputs::Pixels(p) => {
                    let px: Vec<Pixels> = batch.iter().map(|&i| p[i].clone()).collect();
                    model.gradients(&px, &targets)?
                }
            };
            ensure_finite(loss, epoch, "batch loss")?;
            optimizer.step(model.trainable_parameters(), grads.flat(), config.learning_rate);
        }

        let (train_loss, train_acc) = evaluate(&model, &train_inputs, &train_targets, config.threshold)?;
        ensure_finite(train_loss, epoch, "training loss")?;
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&model, &val_inputs, &val_targets, config.threshold)?;
            ensure_finite(l, epoch, "validation loss")?;
            (Some(l), Some(a))
        };
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
        });

        let criterion = val_loss.unwrap_or(train_loss);
        match &best {
            Some((best_loss, _, _)) if criterion >= *best_loss => {}
            _ => best = Some((criterion, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if config.early_stop_patience > 0 && epoch - best_epoch >= config.early_stop_patience {
            stopped_early = epoch < config.epochs;
            break;
        }
    }

    let (best_loss, best_epoch, best_model) = best.expect("at least one epoch runs");
    let metadata = TrainingMetadata {
        seed: config.seed,
        epochs_run: records.len(),
        best_epoch,
        best_val_loss: best_loss,
        optimizer: config.optimizer.to_string(),
        learning_rate: config.learning_rate,
    };
    Ok(TrainOutcome {
        model: best_model,
        history: History {
            epochs: records,
            best_epoch,
            stopped_early,
        },
        metadata,
    })
}

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the uniform initialization range for fresh head weights.
pub const HEAD_INIT_BOUND: f64 = 0.01;

/// Output nonlinearity applied to the head logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Independent per-tag probabilities.
    #[default]
    Sigmoid,
    /// Single-label ablation: outputs sum to one. Inference only.
    Softmax,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl OutputActivation {
    pub fn apply(self, logits: &mut Array2<f64>) {
        match self {
            OutputActivation::Sigmoid => logits.mapv_inplace(sigmoid),
            OutputActivation::Softmax => {
                for mut row in logits.axis_iter_mut(Axis(0)) {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
            }
        }
    }
}

/// Affine classification layer `feature_dim → n_tags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// `(n_tags, feature_dim)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Head {
    /// Zero bias and weights uniform in `±HEAD_INIT_BOUND`.
    pub fn init(feature_dim: usize, n_tags: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: Array2::from_shape_simple_fn((n_tags, feature_dim), || {
                rng.random_range(-HEAD_INIT_BOUND..=HEAD_INIT_BOUND)
            }),
            bias: Array1::zeros(n_tags),
        }
    }

    pub fn zeros(feature_dim: usize, n_tags: usize) -> Self {
        Self {
            weight: Array2::zeros((n_tags, feature_dim)),
            bias: Array1::zeros(n_tags),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// Logits for a `(batch, feature_dim)` feature matrix.
    pub fn logits(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.feature_dim(),
                features.ncols()
            )));
        }
        Ok(features.dot(&self.weight.t()) + &self.bias)
    }
}

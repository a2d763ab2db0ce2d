//! Per-label binary cross-entropy for sigmoid multi-label outputs.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` inside the loss.
pub const CLAMP_EPS: f64 = 1e-7;

fn check(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if probs.dim() != targets.dim() {
        return Err(Error::Validation(format!(
            "probabilities {:?} and targets {:?} differ in shape",
            probs.dim(),
            targets.dim()
        )));
    }
    if probs.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::validation("targets must be 0 or 1"));
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// Mean over the batch of `sum_t -[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce_loss(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    check(probs, targets)?;
    let total = Zip::from(probs).and(targets).fold(0.0, |acc, &p, &y| {
        let p = clamp(p);
        acc - (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    });
    Ok(total / probs.nrows() as f64)
}

/// d loss / d p, including the batch mean. Zero where the clamp is active.
pub fn bce_grad_probs(probs: &Array2<f64>, targets: &Array2<f64>) -> Result<Array2<f64>> {
    check(probs, targets)?;
    let scale = 1.0 / probs.nrows() as f64;
    Ok(Zip::from(probs).and(targets).map_collect(|&p, &y| {
        if !(CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&p) {
            return 0.0;
        }
        scale * (-(y / p) + (1.0 - y) / (1.0 - p))
    }))
}

//! Accuracy metrics and crowd-vs-model probability reports.
//!
//! `overall_accuracy` is per-label (Hamming) accuracy: the share of
//! `(image, tag)` cells where the thresholded prediction equals the majority
//! label. Subset accuracy, the share of images whose whole label vector is
//! reproduced, is reported alongside it.

use std::collections::HashMap;
use std::io::Write;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::model::SentimentModel;
use crate::types::{ImageId, LabelDistribution, TagVocabulary};

fn check(predictions: &Array2<f64>, truths: &Array2<f64>, threshold: f64) -> Result<()> {
    if predictions.dim() != truths.dim() {
        return Err(Error::Validation(format!(
            "predictions {:?} and truths {:?} differ in shape",
            predictions.dim(),
            truths.dim()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!("threshold {threshold} outside (0, 1)")));
    }
    if truths.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::validation("truths must be 0 or 1"));
    }
    if predictions.is_empty() {
        return Err(Error::InsufficientData("no predictions to score".into()));
    }
    Ok(())
}

#[inline]
fn hit(p: f64, y: f64, threshold: f64) -> bool {
    (p > threshold) == (y == 1.0)
}

/// Per-label accuracy in percent.
pub fn accuracy(predictions: &Array2<f64>, truths: &Array2<f64>, threshold: f64) -> Result<f64> {
    check(predictions, truths, threshold)?;
    let hits = ndarray::Zip::from(predictions)
        .and(truths)
        .fold(0usize, |acc, &p, &y| acc + usize::from(hit(p, y, threshold)));
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Per-label accuracy of each tag column, in percent.
pub fn per_tag_accuracy(predictions: &Array2<f64>, truths: &Array2<f64>, threshold: f64) -> Result<Vec<f64>> {
    check(predictions, truths, threshold)?;
    let rows = predictions.nrows() as f64;
    Ok(predictions
        .axis_iter(Axis(1))
        .zip(truths.axis_iter(Axis(1)))
        .map(|(p, y)| {
            let hits = p.iter().zip(y).filter(|(&p, &y)| hit(p, y, threshold)).count();
            100.0 * hits as f64 / rows
        })
        .collect())
}

/// Share of rows whose every label is predicted correctly, in percent.
pub fn subset_accuracy(predictions: &Array2<f64>, truths: &Array2<f64>, threshold: f64) -> Result<f64> {
    check(predictions, truths, threshold)?;
    let exact = predictions
        .axis_iter(Axis(0))
        .zip(truths.axis_iter(Axis(0)))
        .filter(|(p, y)| p.iter().zip(y.iter()).all(|(&p, &y)| hit(p, y, threshold)))
        .count();
    Ok(100.0 * exact as f64 / predictions.nrows() as f64)
}

fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// One image of the report: crowd fractions next to predicted probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image_id: ImageId,
    /// `None` when no crowd distribution was available; the row is then flagged.
    pub ground_truth: Option<Vec<f64>>,
    pub predicted: Vec<f64>,
    pub incomplete: bool,
}

impl ReportRow {
    /// Sum of absolute differences between crowd fractions and predictions.
    pub fn l1_gap(&self) -> Option<f64> {
        self.ground_truth
            .as_ref()
            .map(|gt| gt.iter().zip(&self.predicted).map(|(g, p)| (g - p).abs()).sum())
    }

    pub fn argmax_ground_truth(&self) -> Option<usize> {
        self.ground_truth.as_deref().and_then(argmax)
    }

    pub fn argmax_predicted(&self) -> Option<usize> {
        argmax(&self.predicted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    /// Percent; `None` for an empty evaluation set.
    pub overall_accuracy: Option<f64>,
    pub subset_accuracy: Option<f64>,
    pub per_tag_accuracy: Option<Vec<f64>>,
    /// Ordered by image id.
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn incomplete_images(&self) -> Vec<&ImageId> {
        self.rows.iter().filter(|r| r.incomplete).map(|r| &r.image_id).collect()
    }

    pub fn mean_l1_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self.rows.iter().filter_map(ReportRow::l1_gap).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }
}

/// Assembles a report from already computed predictions. `targets` are the
/// majority labels used for the accuracy columns.
pub fn report_from_predictions(
    image_ids: &[ImageId],
    predictions: &Array2<f64>,
    targets: &Array2<f64>,
    distributions: &HashMap<ImageId, LabelDistribution>,
    threshold: f64,
) -> Result<EvalReport> {
    if image_ids.len() != predictions.nrows() {
        return Err(Error::Validation(format!(
            "{} image ids for {} prediction rows",
            image_ids.len(),
            predictions.nrows()
        )));
    }
    let scored = if image_ids.is_empty() {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Validation(format!("threshold {threshold} outside (0, 1)")));
        }
        None
    } else {
        Some((
            accuracy(predictions, targets, threshold)?,
            subset_accuracy(predictions, targets, threshold)?,
            per_tag_accuracy(predictions, targets, threshold)?,
        ))
    };
    let mut rows: Vec<ReportRow> = image_ids
        .iter()
        .zip(predictions.axis_iter(Axis(0)))
        .map(|(id, pred)| {
            let gt = distributions.get(id).map(|d| d.fractions.clone());
            ReportRow {
                image_id: id.clone(),
                incomplete: gt.is_none(),
                ground_truth: gt,
                predicted: pred.to_vec(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let (overall, subset, per_tag) = match scored {
        Some((o, s, p)) => (Some(o), Some(s), Some(p)),
        None => (None, None, None),
    };
    Ok(EvalReport {
        threshold,
        overall_accuracy: overall,
        subset_accuracy: subset,
        per_tag_accuracy: per_tag,
        rows,
    })
}

pub fn targets_matrix(examples: &[Example], n_tags: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((examples.len(), n_tags));
    for (mut row, ex) in out.axis_iter_mut(Axis(0)).zip(examples) {
        if ex.target.len() != n_tags {
            return Err(Error::Shape(format!(
                "example {} has {} targets, model has {n_tags} outputs",
                ex.image_id,
                ex.target.len()
            )));
        }
        row.assign(&ndarray::ArrayView1::from(&ex.target));
    }
    Ok(out)
}

pub fn build_report(
    model: &SentimentModel,
    eval_set: &[Example],
    distributions: &HashMap<ImageId, LabelDistribution>,
    threshold: f64,
) -> Result<EvalReport> {
    let pixels: Vec<_> = eval_set.iter().map(|e| e.pixels.clone()).collect();
    let predictions = if pixels.is_empty() {
        Array2::zeros((0, model.n_outputs()))
    } else {
        model.predict(&pixels)?
    };
    let targets = targets_matrix(eval_set, model.n_outputs())?;
    let ids: Vec<ImageId> = eval_set.iter().map(|e| e.image_id.clone()).collect();
    report_from_predictions(&ids, &predictions, &targets, distributions, threshold)
}

/// `image_id` followed by a `<tag>_gt,<tag>_pred` column pair per tag.
pub fn write_report_csv(out: impl Write, vocab: &TagVocabulary, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["image_id".to_string()];
    for tag in vocab.canonical_tags() {
        header.push(format!("{tag}_gt"));
        header.push(format!("{tag}_pred"));
    }
    w.write_record(&header)?;
    for row in &report.rows {
        let mut record = vec![row.image_id.to_string()];
        for (i, p) in row.predicted.iter().enumerate() {
            record.push(row.ground_truth.as_ref().map(|g| g[i].to_string()).unwrap_or_default());
            record.push(p.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Compact JSON summary of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub threshold: f64,
    pub n_images: usize,
    /// Per-label (Hamming) accuracy in percent.
    pub overall_accuracy: Option<f64>,
    /// Exact label-vector match in percent.
    pub subset_accuracy: Option<f64>,
    pub per_tag_accuracy: Option<std::collections::BTreeMap<String, f64>>,
    pub accuracy_defined: bool,
    pub mean_l1_gap: Option<f64>,
    pub incomplete_images: Vec<ImageId>,
}

impl ReportSummary {
    pub fn new(vocab: &TagVocabulary, report: &EvalReport) -> Self {
        Self {
            threshold: report.threshold,
            n_images: report.rows.len(),
            overall_accuracy: report.overall_accuracy,
            subset_accuracy: report.subset_accuracy,
            per_tag_accuracy: report.per_tag_accuracy.as_ref().map(|acc| {
                vocab
                    .canonical_tags()
                    .iter()
                    .cloned()
                    .zip(acc.iter().copied())
                    .collect()
            }),
            accuracy_defined: report.overall_accuracy.is_some(),
            mean_l1_gap: report.mean_l1_gap(),
            incomplete_images: report.incomplete_images().into_iter().cloned().collect(),
        }
    }
}

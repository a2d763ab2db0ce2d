//! Crowd statistics and labels derived from annotator responses.
//!
//! Only canonical tags take part in tallies, co-occurrence, distributions and
//! voting. Free-text additional tags are counted separately by
//! [`additional_tag_counts`].
//!
//! Co-occurrence is counted per response: two tags co-occur once for every
//! single response that selected both.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnnotationResponse, ImageId, LabelDistribution, MultiHotLabel, TagVocabulary};

/// Number of responses selecting each canonical tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagTally {
    pub counts: Vec<u64>,
}

impl TagTally {
    pub fn get(&self, vocab: &TagVocabulary, tag: &str) -> Option<u64> {
        vocab.canonical_index(tag).map(|i| self.counts[i])
    }
}

/// Symmetric pair counts with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.counts[a][b]
    }

    pub fn by_name(&self, vocab: &TagVocabulary, a: &str, b: &str) -> Option<u64> {
        Some(self.counts[vocab.canonical_index(a)?][vocab.canonical_index(b)?])
    }

    pub fn transpose(&self) -> Self {
        let n = self.counts.len();
        let counts = (0..n)
            .map(|i| (0..n).map(|j| self.counts[j][i]).collect())
            .collect();
        Self { counts }
    }
}

/// Majority-vote result for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityLabel {
    pub label: MultiHotLabel,
    /// No tag reached a strict majority.
    pub no_majority: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteOptions {
    pub coverage_target: usize,
    /// Vote even when an image has fewer responses than `coverage_target`.
    pub force: bool,
}

impl Default for VoteOptions {
    fn default() -> Self {
        Self {
            coverage_target: 5,
            force: false,
        }
    }
}

fn selection_mask(resp: &AnnotationResponse, vocab: &TagVocabulary) -> Result<u64> {
    let mut mask = 0u64;
    for tag in &resp.selected_tags {
        let idx = vocab.canonical_index(tag).ok_or_else(|| {
            Error::Validation(format!(
                "response by {} for {} selects unknown tag {tag:?}",
                resp.annotator_id, resp.image_id
            ))
        })?;
        mask |= 1 << idx;
    }
    Ok(mask)
}

fn masks<R: Borrow<AnnotationResponse>>(responses: &[R], vocab: &TagVocabulary) -> Result<Vec<u64>> {
    responses
        .iter()
        .map(|r| selection_mask(r.borrow(), vocab))
        .collect()
}

pub fn tally_tags<R: Borrow<AnnotationResponse>>(
    responses: &[R],
    vocab: &TagVocabulary,
) -> Result<TagTally> {
    let mut counts = vec![0u64; vocab.canonical_len()];
    for mask in masks(responses, vocab)? {
        for (i, c) in counts.iter_mut().enumerate() {
            *c += (mask >> i) & 1;
        }
    }
    Ok(TagTally { counts })
}

pub fn cooccurrence<R: Borrow<AnnotationResponse>>(
    responses: &[R],
    vocab: &TagVocabulary,
) -> Result<CooccurrenceMatrix> {
    let n = vocab.canonical_len();
    let mut counts = vec![vec![0u64; n]; n];
    for mask in masks(responses, vocab)? {
        let present: Vec<usize> = (0..n).filter(|t| mask & (1 << t) != 0).collect();
        for (i, &a) in present.iter().enumerate() {
            for &b in &present[i + 1..] {
                counts[a][b] += 1;
                counts[b][a] += 1;
            }
        }
    }
    Ok(CooccurrenceMatrix { counts })
}

/// Number of responses whose selection contains every tag in `tags` (at least two
/// distinct canonical tags).
pub fn joint_usage<R: Borrow<AnnotationResponse>>(
    responses: &[R],
    vocab: &TagVocabulary,
    tags: &[&str],
) -> Result<u64> {
    let mut wanted = 0u64;
    for tag in tags {
        let idx = vocab
            .canonical_index(tag)
            .ok_or_else(|| Error::Validation(format!("{tag:?} is not a canonical tag")))?;
        wanted |= 1 << idx;
    }
    if wanted.count_ones() < 2 {
        return Err(Error::validation("joint usage needs at least two distinct tags"));
    }
    Ok(masks(responses, vocab)?
        .into_iter()
        .filter(|m| m & wanted == wanted)
        .count() as u64)
}

fn single_image<R: Borrow<AnnotationResponse>>(responses: &[R]) -> Result<&ImageId> {
    let first = responses
        .first()
        .ok_or_else(|| Error::InsufficientData("no responses for image".into()))?
        .borrow();
    if let Some(other) = responses
        .iter()
        .map(Borrow::borrow)
        .find(|r| r.image_id != first.image_id)
    {
        return Err(Error::Validation(format!(
            "responses mix images {} and {}",
            first.image_id, other.image_id
        )));
    }
    Ok(&first.image_id)
}

fn per_tag_counts(masks: &[u64], n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| masks.iter().filter(|&&m| m & (1 << i) != 0).count())
        .collect()
}

/// Fraction of the image's responses that selected each canonical tag.
pub fn label_distribution<R: Borrow<AnnotationResponse>>(
    responses: &[R],
    vocab: &TagVocabulary,
) -> Result<LabelDistribution> {
    let image_id = single_image(responses)?.clone();
    let masks = masks(responses, vocab)?;
    let total = masks.len() as f64;
    let fractions = per_tag_counts(&masks, vocab.canonical_len())
        .into_iter()
        .map(|c| c as f64 / total)
        .collect();
    Ok(LabelDistribution { image_id, fractions })
}

/// Strict-majority vote: a tag is on when more than half of the image's
/// responses selected it.
pub fn majority_vote<R: Borrow<AnnotationResponse>>(
    responses: &[R],
    vocab: &TagVocabulary,
    opts: VoteOptions,
) -> Result<MajorityLabel> {
    let image_id = single_image(responses)?.clone();
    if responses.len() < opts.coverage_target && !opts.force {
        return Err(Error::InsufficientData(format!(
            "image {image_id} has {} responses, coverage target is {}",
            responses.len(),
            opts.coverage_target
        )));
    }
    let masks = masks(responses, vocab)?;
    let n = masks.len();
    let bits: Vec<bool> = per_tag_counts(&masks, vocab.canonical_len())
        .into_iter()
        .map(|c| 2 * c > n)
        .collect();
    let no_majority = !bits.iter().any(|&b| b);
    Ok(MajorityLabel {
        label: MultiHotLabel { image_id, bits },
        no_majority,
    })
}

/// Groups responses by image, ordered by image id.
pub fn group_by_image<R: Borrow<AnnotationResponse>>(
    responses: &[R],
) -> BTreeMap<ImageId, Vec<&AnnotationResponse>> {
    let mut groups: BTreeMap<ImageId, Vec<&AnnotationResponse>> = BTreeMap::new();
    for r in responses {
        let r = r.borrow();
        groups.entry(r.image_id.clone()).or_default().push(r);
    }
    groups
}

/// How often each free-text tag was added, across all responses.
pub fn additional_tag_counts<R: Borrow<AnnotationResponse>>(responses: &[R]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for r in responses {
        for tag in &r.borrow().additional_tags {
            *counts.entry(tag.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Everything the offline aggregation stage produces for a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignAggregate {
    pub tally: TagTally,
    pub cooccurrence: CooccurrenceMatrix,
    pub distributions: Vec<LabelDistribution>,
    pub labels: Vec<MajorityLabel>,
    /// Images left unlabeled because they are below the coverage target.
    pub under_covered: Vec<(ImageId, usize)>,
    pub additional_tags: BTreeMap<String, u64>,
}

pub fn aggregate_campaign<R: Borrow<AnnotationResponse>>(
    responses: &[R],
    vocab: &TagVocabulary,
    opts: VoteOptions,
) -> Result<CampaignAggregate> {
    let tally = tally_tags(responses, vocab)?;
    let cooccurrence = cooccurrence(responses, vocab)?;
    let mut distributions = Vec::new();
    let mut labels = Vec::new();
    let mut under_covered = Vec::new();
    for (image_id, group) in group_by_image(responses) {
        distributions.push(label_distribution(&group, vocab)?);
        match majority_vote(&group, vocab, opts) {
            Ok(label) => labels.push(label),
            Err(Error::InsufficientData(_)) => under_covered.push((image_id, group.len())),
            Err(e) => return Err(e),
        }
    }
    Ok(CampaignAggregate {
        tally,
        cooccurrence,
        distributions,
        labels,
        under_covered,
        additional_tags: additional_tag_counts(responses),
    })
}

pub fn write_tally_csv(out: impl Write, vocab: &TagVocabulary, tally: &TagTally) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tag", "count"])?;
    for (tag, count) in vocab.canonical_tags().iter().zip(&tally.counts) {
        w.write_record([tag.as_str(), &count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cooccurrence_csv(
    out: impl Write,
    vocab: &TagVocabulary,
    matrix: &CooccurrenceMatrix,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tag".to_string()];
    header.extend(vocab.canonical_tags().iter().cloned());
    w.write_record(&header)?;
    for (tag, row) in vocab.canonical_tags().iter().zip(&matrix.counts) {
        let mut record = vec![tag.clone()];
        record.extend(row.iter().map(u64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_distributions_csv(
    out: impl Write,
    vocab: &TagVocabulary,
    distributions: &[LabelDistribution],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["image_id".to_string()];
    header.extend(vocab.canonical_tags().iter().cloned());
    w.write_record(&header)?;
    for d in distributions {
        let mut record = vec![d.image_id.to_string()];
        record.extend(d.fractions.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels_csv(out: impl Write, vocab: &TagVocabulary, labels: &[MajorityLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["image_id".to_string()];
    header.extend(vocab.canonical_tags().iter().cloned());
    header.push("no_majority".into());
    w.write_record(&header)?;
    for l in labels {
        let mut record = vec![l.label.image_id.to_string()];
        record.extend(l.label.bits.iter().map(|&b| u8::from(b).to_string()));
        record.push(u8::from(l.no_majority).to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_additional_tags_csv(out: impl Write, counts: &BTreeMap<String, u64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tag", "count"])?;
    for (tag, count) in counts {
        w.write_record([tag.as_str(), &count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(header: &csv::StringRecord, vocab: &TagVocabulary, trailing: &[&str]) -> Result<()> {
    let expected: Vec<&str> = std::iter::once("image_id")
        .chain(vocab.canonical_tags().iter().map(String::as_str))
        .chain(trailing.iter().copied())
        .collect();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Validation(format!(
            "unexpected CSV header {:?}, expected {expected:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn csv_row_error(row: usize, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("CSV row {row}: {msg}"))
}

pub fn read_distributions_csv(input: impl Read, vocab: &TagVocabulary) -> Result<Vec<LabelDistribution>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, vocab, &[])?;
    let n = vocab.canonical_len();
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let fractions = (1..=n)
            .map(|i| {
                let v: f64 = record[i].parse().map_err(|e| csv_row_error(row + 2, e))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(csv_row_error(row + 2, format!("fraction {v} outside [0,1]")));
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;
        out.push(LabelDistribution {
            image_id: record[0].into(),
            fractions,
        });
    }
    Ok(out)
}

pub fn read_labels_csv(input: impl Read, vocab: &TagVocabulary) -> Result<Vec<MajorityLabel>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, vocab, &["no_majority"])?;
    let n = vocab.canonical_len();
    let parse_bit = |row: usize, s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(csv_row_error(row, format!("expected 0 or 1, got {other:?}"))),
    };
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let bits = (1..=n)
            .map(|i| parse_bit(row + 2, &record[i]))
            .collect::<Result<Vec<_>>>()?;
        let no_majority = parse_bit(row + 2, &record[n + 1])?;
        out.push(MajorityLabel {
            label: MultiHotLabel {
                image_id: record[0].into(),
                bits,
            },
            no_majority,
        });
    }
    Ok(out)
}

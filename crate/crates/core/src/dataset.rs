//! Training-ready datasets: seeded splits, multi-hot encoding and the image
//! preprocessing contract.
//!
//! Pixels are stored channel-major, shape `(3, height, width)`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BackboneSpec;
use crate::types::{DisasterType, ImageId, ImageRecord, MultiHotLabel};

/// Smallest corpus for which every partition is non-empty.
pub const MIN_SPLIT_SIZE: usize = 10;

/// Train/validation/evaluation partition of a labeled corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<ImageId>,
    pub validation: Vec<ImageId>,
    pub evaluation: Vec<ImageId>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.evaluation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(train, validation, evaluation)` sizes: 60% and 10% rounded down, the rest
/// to evaluation.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 6 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

fn prepare_ids(ids: &[ImageId]) -> Result<Vec<ImageId>> {
    if ids.len() < MIN_SPLIT_SIZE {
        return Err(Error::TooSmall(format!(
            "{} images, need at least {MIN_SPLIT_SIZE}",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate image id {}", w[0])));
    }
    Ok(sorted)
}

fn partition(seed: u64, ordered: Vec<ImageId>) -> DatasetSplit {
    let (n_train, n_val, _) = split_sizes(ordered.len());
    let mut rest = ordered;
    let evaluation = rest.split_off(n_train + n_val);
    let validation = rest.split_off(n_train);
    DatasetSplit {
        seed,
        train: rest,
        validation,
        evaluation,
    }
}

/// Seeded shuffle followed by a floor partition. The result depends only on the
/// set of ids and the seed, not on the input order.
pub fn split(ids: &[ImageId], seed: u64) -> Result<DatasetSplit> {
    let mut ids = prepare_ids(ids)?;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(partition(seed, ids))
}

/// Like [`split`], but interleaves disaster types so each partition receives
/// them roughly in proportion. Partition sizes are identical to [`split`].
pub fn split_stratified(records: &[(ImageId, DisasterType)], seed: u64) -> Result<DatasetSplit> {
    let ids: Vec<ImageId> = records.iter().map(|(id, _)| id.clone()).collect();
    prepare_ids(&ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: BTreeMap<DisasterType, Vec<ImageId>> = BTreeMap::new();
    for (id, kind) in records {
        strata.entry(*kind).or_default().push(id.clone());
    }
    // Each item gets the key (rank + 0.5) / stratum_size; sorting by it spreads
    // every stratum evenly over the whole ordering.
    let mut keyed = Vec::with_capacity(records.len());
    for (stratum, (_, mut members)) in strata.into_iter().enumerate() {
        members.sort();
        members.shuffle(&mut rng);
        let size = members.len() as f64;
        for (rank, id) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / size, stratum, id));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(partition(seed, keyed.into_iter().map(|(_, _, id)| id).collect()))
}

/// Multi-hot label as a 0/1 vector in canonical tag order.
pub fn encode(label: &MultiHotLabel) -> Vec<u8> {
    label.bits.iter().map(|&b| u8::from(b)).collect()
}

pub fn decode(image_id: ImageId, bits: &[u8]) -> Result<MultiHotLabel> {
    let bits = bits
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Validation(format!("label bit must be 0 or 1, got {other}"))),
        })
        .collect::<Result<_>>()?;
    Ok(MultiHotLabel { image_id, bits })
}

pub type Pixels = Array3<f64>;

/// Decodes `bytes` and applies [`preprocess_image`].
pub fn preprocess(bytes: &[u8], spec: &BackboneSpec) -> Result<Pixels> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    preprocess_image(&img, spec)
}

pub fn preprocess_file(path: &Path, spec: &BackboneSpec) -> Result<Pixels> {
    let bytes = std::fs::read(path).map_err(|e| Error::Load {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    preprocess(&bytes, spec).map_err(|e| match e {
        Error::Decode { reason, .. } => Error::Decode {
            path: path.display().to_string(),
            reason,
        },
        other => other,
    })
}

/// Bilinear resize (no aspect-preserving crop) to the backbone resolution, scale
/// to `[0, 1]`, then normalize with the backbone's per-channel mean and std.
pub fn preprocess_image(img: &DynamicImage, spec: &BackboneSpec) -> Result<Pixels> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::validation("image has zero size"));
    }
    let (h, w) = spec.input_resolution;
    let rgb = img.to_rgb32f();
    let resized = image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
    let norm = spec.normalization;
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        let v = f64::from(resized.get_pixel(x as u32, y as u32).0[c]);
        (v - norm.mean[c]) / norm.std[c]
    }))
}

/// One preprocessed training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image_id: ImageId,
    pub pixels: Pixels,
    pub target: Vec<f64>,
}

/// Loads and preprocesses the images for `labels`, in parallel, preserving the
/// order of `labels`.
pub fn build_examples(
    records: &HashMap<ImageId, ImageRecord>,
    labels: &[MultiHotLabel],
    spec: &BackboneSpec,
) -> Result<Vec<Example>> {
    labels
        .par_iter()
        .map(|label| {
            let record = records.get(&label.image_id).ok_or_else(|| {
                Error::Validation(format!("image {} is not in the manifest", label.image_id))
            })?;
            Ok(Example {
                image_id: label.image_id.clone(),
                pixels: preprocess_file(Path::new(&record.uri), spec)?,
                target: label.bits.iter().map(|&b| f64::from(u8::from(b))).collect(),
            })
        })
        .collect()
}

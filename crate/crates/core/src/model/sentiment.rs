use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{Head, OutputActivation};
use super::loss::{bce_grad_probs, bce_loss};
use super::network::{Network, ParamGrads};
use super::spec::{BackboneSpec, WeightsSource, TINY};
use crate::dataset::Pixels;
use crate::error::{Error, Result};
use crate::types::TagVocabulary;

/// Which parameters take part in gradient updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePolicy {
    /// Only the replaced head is trained; backbone weights stay fixed.
    #[default]
    HeadOnly,
    FullFineTune,
}

impl FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head-only" => Ok(FreezePolicy::HeadOnly),
            "full-fine-tune" => Ok(FreezePolicy::FullFineTune),
            other => Err(Error::Configuration(format!(
                "unknown freeze policy {other:?}; use head-only or full-fine-tune"
            ))),
        }
    }
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreezePolicy::HeadOnly => "head-only",
            FreezePolicy::FullFineTune => "full-fine-tune",
        })
    }
}

/// Sigmoid outputs are kept inside this open interval so that saturated
/// logits never report exactly 0 or 1.
const OUTPUT_FLOOR: f64 = f64::MIN_POSITIVE;
const OUTPUT_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Loss gradients for one batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
    /// Present only under [`FreezePolicy::FullFineTune`].
    pub backbone: Option<ParamGrads>,
}

impl Gradients {
    /// Flat views in [`SentimentModel::trainable_parameters`] order.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.head_weight.as_slice().expect("contiguous"),
            self.head_bias.as_slice().expect("contiguous"),
        ];
        if let Some(bb) = &self.backbone {
            out.extend(bb.iter().map(|g| g.as_slice().expect("contiguous")));
        }
        out
    }
}

/// Backbone feature extractor followed by a replaced multi-label head.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentModel {
    spec: BackboneSpec,
    vocabulary: TagVocabulary,
    backbone: Network,
    head: Head,
    freeze_policy: FreezePolicy,
    activation: OutputActivation,
}

/// Loads (or, for the tiny backbone, generates) the backbone weights a spec refers to.
pub fn load_backbone(spec: &BackboneSpec) -> Result<Network> {
    spec.validate()?;
    let network = match &spec.weights_source {
        WeightsSource::Random { seed } => {
            if spec.name != TINY {
                return Err(Error::Configuration(format!(
                    "backbone {} has no built-in architecture; supply a weights file",
                    spec.name
                )));
            }
            Network::tiny(*seed, spec.input_resolution, spec.feature_dim)?
        }
        WeightsSource::Checkpoint { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let mut net: Network = serde_json::from_str(&text).map_err(|e| Error::Load {
                path: path.clone(),
                reason: format!("not a network weights file: {e}"),
            })?;
            net.make_contiguous();
            net
        }
        WeightsSource::Unspecified => {
            return Err(Error::Load {
                path: Default::default(),
                reason: format!("backbone {} needs a pretrained weights file", spec.name),
            })
        }
    };
    let produced = network.output_dim(spec.input_resolution).map_err(|e| {
        Error::Configuration(format!("backbone {} rejects its declared input: {e}", spec.name))
    })?;
    if produced != spec.feature_dim {
        return Err(Error::Configuration(format!(
            "backbone {} produces {produced} features, spec declares {}",
            spec.name, spec.feature_dim
        )));
    }
    Ok(network)
}

impl SentimentModel {
    /// Loads the backbone and attaches a freshly initialized head with one output
    /// per canonical tag.
    pub fn build(
        spec: BackboneSpec,
        vocabulary: &TagVocabulary,
        freeze_policy: FreezePolicy,
        seed: u64,
    ) -> Result<Self> {
        let backbone = load_backbone(&spec)?;
        let head = Head::init(spec.feature_dim, vocabulary.canonical_len(), seed);
        Self::from_parts(spec, vocabulary.clone(), backbone, head, freeze_policy)
    }

    pub fn from_parts(
        spec: BackboneSpec,
        vocabulary: TagVocabulary,
        backbone: Network,
        head: Head,
        freeze_policy: FreezePolicy,
    ) -> Result<Self> {
        if vocabulary.canonical_len() < 2 {
            return Err(Error::Configuration("vocabulary needs at least two tags".into()));
        }
        if head.feature_dim() != spec.feature_dim || head.n_outputs() != vocabulary.canonical_len() {
            return Err(Error::Configuration(format!(
                "head is {}x{}, expected {}x{}",
                head.n_outputs(),
                head.feature_dim(),
                vocabulary.canonical_len(),
                spec.feature_dim
            )));
        }
        Ok(Self {
            spec,
            vocabulary,
            backbone,
            head,
            freeze_policy,
            activation: OutputActivation::Sigmoid,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }

    pub fn backbone(&self) -> &Network {
        &self.backbone
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn freeze_policy(&self) -> FreezePolicy {
        self.freeze_policy
    }

    pub fn set_freeze_policy(&mut self, policy: FreezePolicy) {
        self.freeze_policy = policy;
    }

    pub fn activation(&self) -> OutputActivation {
        self.activation
    }

    /// Swaps the output nonlinearity; softmax exists for ablation only.
    pub fn set_activation(&mut self, activation: OutputActivation) {
        self.activation = activation;
    }

    pub fn n_outputs(&self) -> usize {
        self.head.n_outputs()
    }

    fn check_input(&self, px: &Pixels) -> Result<()> {
        let (h, w) = self.spec.input_resolution;
        if px.dim() != (3, h, w) {
            return Err(Error::Shape(format!(
                "backbone {} expects input (3, {h}, {w}), got {:?}",
                self.spec.name,
                px.dim()
            )));
        }
        Ok(())
    }

    /// Backbone features, one row per image.
    pub fn features(&self, batch: &[Pixels]) -> Result<Array2<f64>> {
        let rows = batch
            .par_iter()
            .map(|px| {
                self.check_input(px)?;
                self.backbone.forward(px)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((batch.len(), self.spec.feature_dim));
        for (mut dst, row) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&row);
        }
        Ok(out)
    }

    pub fn probabilities_from_features(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = self.head.logits(features)?;
        self.activation.apply(&mut out);
        if self.activation == OutputActivation::Sigmoid {
            out.mapv_inplace(|p| p.clamp(OUTPUT_FLOOR, OUTPUT_CEIL));
        }
        Ok(out)
    }

    /// Per-tag probabilities, `(batch, n_tags)`.
    pub fn predict(&self, batch: &[Pixels]) -> Result<Array2<f64>> {
        self.probabilities_from_features(&self.features(batch)?)
    }

    fn require_sigmoid(&self) -> Result<()> {
        if self.activation != OutputActivation::Sigmoid {
            return Err(Error::Configuration("training requires the sigmoid head".into()));
        }
        Ok(())
    }

    /// d loss / d logits for the sigmoid head.
    fn logit_gradients(&self, probs: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let loss = bce_loss(probs, targets)?;
        let mut dz = bce_grad_probs(probs, targets)?;
        dz.zip_mut_with(probs, |g, &p| *g *= p * (1.0 - p));
        Ok((loss, dz))
    }

    /// Loss and head gradients from precomputed backbone features.
    pub fn head_gradients(&self, features: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Gradients)> {
        self.require_sigmoid()?;
        let probs = self.probabilities_from_features(features)?;
        let (loss, dz) = self.logit_gradients(&probs, targets)?;
        Ok((
            loss,
            Gradients {
                head_weight: dz.t().dot(features),
                head_bias: dz.sum_axis(Axis(0)),
                backbone: None,
            },
        ))
    }

    /// Loss and gradients for every trainable parameter under the freeze policy.
    pub fn gradients(&self, batch: &[Pixels], targets: &Array2<f64>) -> Result<(f64, Gradients)> {
        if self.freeze_policy == FreezePolicy::HeadOnly {
            return self.head_gradients(&self.features(batch)?, targets);
        }
        self.require_sigmoid()?;
        let traced = batch
            .par_iter()
            .map(|px| {
                self.check_input(px)?;
                self.backbone.forward_traced(px)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut features = Array2::zeros((batch.len(), self.spec.feature_dim));
        for (mut dst, (row, _)) in features.axis_iter_mut(Axis(0)).zip(&traced) {
            dst.assign(row);
        }
        let probs = self.probabilities_from_features(&features)?;
        let (loss, dz) = self.logit_gradients(&probs, targets)?;

        let per_sample = traced
            .par_iter()
            .zip(dz.axis_iter(Axis(0)).collect::<Vec<_>>())
            .map(|((_, trace), dz_row)| {
                let d_features = self.head.weight.t().dot(&dz_row);
                self.backbone.backward(trace, &d_features)
            })
            .collect::<Result<Vec<_>>>()?;
        // Sequential reduction keeps the sum order fixed.
        let mut backbone: Option<ParamGrads> = None;
        for grads in per_sample {
            match &mut backbone {
                None => backbone = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(grads) {
                        *a += &g;
                    }
                }
            }
        }
        Ok((
            loss,
            Gradients {
                head_weight: dz.t().dot(&features),
                head_bias: dz.sum_axis(Axis(0)),
                backbone,
            },
        ))
    }

    /// Parameters the optimizer may update: head weight, head bias, then the
    /// backbone arrays under [`FreezePolicy::FullFineTune`].
    pub fn trainable_parameters(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.head.weight.as_slice_mut().expect("contiguous"),
            self.head.bias.as_slice_mut().expect("contiguous"),
        ];
        if self.freeze_policy == FreezePolicy::FullFineTune {
            out.extend(self.backbone.parameters_mut());
        }
        out
    }

    pub(crate) fn parts(&self) -> (&BackboneSpec, &TagVocabulary, &Network, &Head) {
        (&self.spec, &self.vocabulary, &self.backbone, &self.head)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::types::canonical_vocabulary;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SentimentModel {
        SentimentModel::build(BackboneSpec::tiny(7), &canonical_vocabulary(), FreezePolicy::HeadOnly, 1).unwrap()
    }

    fn random_pixels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pixels> {
        (0..n)
            .map(|_| Array3::from_shape_simple_fn((3, 16, 16), || rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn seven_outputs() {
        let model = tiny();
        assert_eq!(model.n_outputs(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.predict(&random_pixels(&mut rng, 3)).unwrap();
        assert_eq!(out.dim(), (3, 7));
        assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn fresh_head_is_near_half() {
        let model = tiny();
        assert!(model.head().weight.iter().all(|w| w.abs() <= 0.01));
        assert!(model.head().weight.iter().any(|&w| w != 0.0));
        assert!(model.head().bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_head_gives_exact_half() {
        let mut model = tiny();
        *model.head_mut() = Head::zeros(64, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = model.predict(&random_pixels(&mut rng, 4)).unwrap();
        assert!(out.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn wrong_resolution_is_shape_error() {
        let model = tiny();
        let bad = vec![Array3::zeros((3, 15, 16))];
        assert!(matches!(model.predict(&bad), Err(Error::Shape(_))));
        let bad = vec![Array3::zeros((1, 16, 16))];
        assert!(matches!(model.predict(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn duplicate_images_give_identical_rows() {
        let model = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let px = random_pixels(&mut rng, 1).pop().unwrap();
        let out = model.predict(&[px.clone(), px]).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn missing_checkpoint_is_load_error() {
        let spec = BackboneSpec::named("resnet").unwrap();
        let err = SentimentModel::build(spec.clone(), &canonical_vocabulary(), FreezePolicy::HeadOnly, 0);
        assert!(matches!(err, Err(Error::Load { .. })));
        let spec = spec.with_weights("/nonexistent/resnet.json");
        let err = SentimentModel::build(spec, &canonical_vocabulary(), FreezePolicy::HeadOnly, 0);
        assert!(matches!(err, Err(Error::Load { .. })));
    }

    #[test]
    fn feature_dim_mismatch_is_configuration_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Network::tiny(0, (16, 16), 32).unwrap();
        std::fs::write(&path, serde_json::to_string(&net).unwrap()).unwrap();
        let mut spec = BackboneSpec::tiny(0).with_weights(&path);
        spec.feature_dim = 64;
        let err = SentimentModel::build(spec.clone(), &canonical_vocabulary(), FreezePolicy::HeadOnly, 0);
        assert!(matches!(err, Err(Error::Configuration(_))), "{err:?}");
        spec.feature_dim = 32;
        let model = SentimentModel::build(spec, &canonical_vocabulary(), FreezePolicy::HeadOnly, 0).unwrap();
        assert_eq!(model.backbone(), &net);
    }

    #[test]
    fn random_weights_only_for_tiny() {
        let mut spec = BackboneSpec::named("alexnet").unwrap();
        spec.weights_source = WeightsSource::Random { seed: 0 };
        let err = SentimentModel::build(spec, &canonical_vocabulary(), FreezePolicy::HeadOnly, 0);
        assert!(matches!(err, Err(Error::Configuration(_))));
    }

    #[test]
    fn head_rows_are_independent() {
        let model = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let px = random_pixels(&mut rng, 2);
        let before = model.predict(&px).unwrap();
        for tag in 0..7 {
            let mut changed = model.clone();
            changed.head_mut().weight.row_mut(tag).mapv_inplace(|w| w + 0.3);
            changed.head_mut().bias[tag] -= 0.2;
            let after = changed.predict(&px).unwrap();
            for other in (0..7).filter(|&t| t != tag) {
                for b in 0..2 {
                    assert_eq!(before[[b, other]].to_bits(), after[[b, other]].to_bits());
                }
            }
            assert_ne!(before[[0, tag]], after[[0, tag]]);
        }
    }

    #[test]
    fn sigmoid_sums_can_exceed_one_softmax_cannot() {
        let mut model = tiny();
        *model.head_mut() = Head::zeros(64, 7);
        model.head_mut().bias.fill(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let px = random_pixels(&mut rng, 2);
        let sig = model.predict(&px).unwrap();
        assert!(sig.rows().into_iter().all(|r| r.sum() > 1.0));
        model.set_activation(OutputActivation::Softmax);
        let soft = model.predict(&px).unwrap();
        assert!(soft.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn saturated_logits_stay_inside_unit_interval() {
        let mut model = tiny();
        *model.head_mut() = Head::zeros(64, 7);
        model.head_mut().bias.assign(&ndarray::array![800.0, -800.0, 40.0, -40.0, 0.0, 1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let out = model.predict(&random_pixels(&mut rng, 1)).unwrap();
        assert!(out.iter().all(|&p| p > 0.0 && p < 1.0), "{out:?}");
    }

    #[test]
    fn softmax_cannot_be_trained() {
        let mut model = tiny();
        model.set_activation(OutputActivation::Softmax);
        let feats = Array2::zeros((1, 64));
        assert!(model.head_gradients(&feats, &Array2::zeros((1, 7))).is_err());
    }

    #[test]
    fn full_fine_tune_backbone_gradient_matches_finite_differences() {
        let mut model = tiny();
        model.set_freeze_policy(FreezePolicy::FullFineTune);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Larger head weights make backbone gradients visible above round-off.
        model.head_mut().weight.mapv_inplace(|w| w * 30.0);
        let px = random_pixels(&mut rng, 2);
        let targets = ndarray::array![[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]];
        let (_, grads) = model.gradients(&px, &targets).unwrap();
        let flat: Vec<Vec<f64>> = grads.flat().iter().map(|s| s.to_vec()).collect();
        let h = 1e-6;
        let n = model.trainable_parameters().len();
        assert_eq!(n, flat.len());
        for p in 2..n {
            let len = model.trainable_parameters()[p].len();
            for i in (0..len).step_by((len / 5).max(1)) {
                let orig = model.trainable_parameters()[p][i];
                model.trainable_parameters()[p][i] = orig + h;
                let plus = bce_loss(&model.predict(&px).unwrap(), &targets).unwrap();
                model.trainable_parameters()[p][i] = orig - h;
                let minus = bce_loss(&model.predict(&px).unwrap(), &targets).unwrap();
                model.trainable_parameters()[p][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = flat[p][i];
                assert!(
                    (numeric - analytic).abs() <= 1e-4 * numeric.abs().max(analytic.abs()).max(1e-3),
                    "param {p}[{i}]: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }
}

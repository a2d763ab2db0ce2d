use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sentiscope_core::evaluation::{accuracy, report_from_predictions, subset_accuracy, write_report_csv};
use sentiscope_core::{canonical_vocabulary, ImageId, LabelDistribution};

#[derive(Deserialize)]
struct SampleRow {
    image_id: String,
    gt: Vec<f64>,
    pred: Vec<f64>,
}

fn sample_rows() -> Vec<SampleRow> {
    serde_json::from_str(include_str!("fixtures/sample_rows.json")).unwrap()
}

#[test]
fn sample_rows_argmax_agreement() {
    let vocab = canonical_vocabulary();
    let rows = sample_rows();
    let ids: Vec<ImageId> = rows.iter().map(|r| r.image_id.as_str().into()).collect();
    let preds = Array2::from_shape_vec((4, 7), rows.iter().flat_map(|r| r.pred.clone()).collect()).unwrap();
    let targets = Array2::from_shape_vec(
        (4, 7),
        rows.iter().flat_map(|r| r.gt.iter().map(|&g| f64::from(u8::from(g > 0.5)))).collect(),
    )
    .unwrap();
    let dists: HashMap<ImageId, LabelDistribution> = rows
        .iter()
        .map(|r| {
            let id: ImageId = r.image_id.as_str().into();
            (id.clone(), LabelDistribution { image_id: id, fractions: r.gt.clone() })
        })
        .collect();
    let report = report_from_predictions(&ids, &preds, &targets, &dists, 0.5).unwrap();

    let argmax = |row: usize| {
        let r = &report.rows[row];
        (
            vocab.canonical_tags()[r.argmax_ground_truth().unwrap()].as_str(),
            vocab.canonical_tags()[r.argmax_predicted().unwrap()].as_str(),
        )
    };
    assert_eq!(argmax(0), ("pain", "pain"));
    assert_eq!(argmax(1), ("rescue", "rescue"));
    assert_eq!(argmax(3), ("rescue", "rescue"));

    let row1 = &report.rows[0];
    assert_eq!(row1.ground_truth.as_ref().unwrap()[4], 0.35);
    assert_eq!(row1.predicted[4], 0.58);
    let row2_sum: f64 = report.rows[1].ground_truth.as_ref().unwrap().iter().sum();
    assert!((row2_sum - 1.723).abs() < 1e-9, "{row2_sum}");
    assert!(report.incomplete_images().is_empty());

    let mut csv = Vec::new();
    write_report_csv(&mut csv, &vocab, &report).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("image_id,destruction_gt,destruction_pred,happiness_gt"));
    assert_eq!(lines.count(), 4);
}

fn brute_force_accuracy(p: &Array2<f64>, y: &Array2<f64>, t: f64) -> f64 {
    let mut hits = 0usize;
    let mut cells = 0usize;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let predicted_on = p[[i, j]] > t;
            let truly_on = y[[i, j]] == 1.0;
            if predicted_on == truly_on {
                hits += 1;
            }
            cells += 1;
        }
    }
    100.0 * hits as f64 / cells as f64
}

#[test]
fn accuracy_matches_brute_force_and_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.random_range(1..=30);
        let t = rng.random_range(0.05..0.95);
        let p = Array2::from_shape_simple_fn((n, 7), || rng.random_range(0.0..1.0));
        let y = Array2::from_shape_simple_fn((n, 7), || f64::from(u8::from(rng.random_bool(0.4))));
        let acc = accuracy(&p, &y, t).unwrap();
        assert!((acc - brute_force_accuracy(&p, &y, t)).abs() < 1e-9);
        assert!((0.0..=100.0).contains(&acc));

        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut rng);
        let pp = p.select(ndarray::Axis(1), &perm);
        let yp = y.select(ndarray::Axis(1), &perm);
        assert_eq!(accuracy(&pp, &yp, t).unwrap(), acc);
        assert_eq!(subset_accuracy(&pp, &yp, t).unwrap(), subset_accuracy(&p, &y, t).unwrap());
    }
}

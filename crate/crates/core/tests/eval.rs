mod common;

use landmark_adapt::data::{toy_corpus, AugmentRanges, Family, Point, Split};
use landmark_adapt::eval::{
    consistency_error, evaluate, fit_regressor, plot_reports, regression_error, ConstantSource, Direction, EvalData,
    EvalOptions, EvalReport, ErrorMetric, Protocol, Provenance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sets(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<Point>> {
    (0..n)
        .map(|_| (0..k).map(|_| [rng.random_range(10.0..118.0), rng.random_range(10.0..118.0)]).collect())
        .collect()
}

fn affine(sets: &[Vec<Point>], m: [[f64; 3]; 2]) -> Vec<Vec<Point>> {
    sets.iter()
        .map(|s| {
            s.iter()
                .map(|p| {
                    [
                        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
                        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
                    ]
                })
                .collect()
        })
        .collect()
}

fn forward_error(disc: &[Vec<Point>], ann: &[Vec<Point>], split: usize) -> f64 {
    let iod: Vec<f64> = ann[split..].iter().map(|s| (s[0][0] - s[1][0]).hypot(s[0][1] - s[1][1])).collect();
    let model = fit_regressor(&disc[..split], &ann[..split], split, Direction::Forward).unwrap();
    regression_error(&model, &disc[split..], &ann[split..], &iod, ErrorMetric::Nme)
        .unwrap()
        .value
}

#[test]
fn forward_error_ignores_affine_reparametrisation_of_discovered_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let disc = random_sets(&mut rng, 80, 4);
    let ann = random_sets(&mut rng, 80, 3);
    let e1 = forward_error(&disc, &ann, 60);
    let moved = affine(&disc, [[1.7, -0.4, 12.0], [0.3, 0.9, -5.0]]);
    let e2 = forward_error(&moved, &ann, 60);
    assert!((e1 - e2).abs() < 1e-8 * e1.max(1.0), "{e1} vs {e2}");
}

#[test]
fn exact_linear_relation_has_zero_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let disc = random_sets(&mut rng, 40, 5);
    let ann: Vec<Vec<Point>> = affine(&disc, [[0.5, 0.1, 3.0], [-0.2, 1.1, 7.0]])
        .into_iter()
        .map(|s| s[..3].to_vec())
        .collect();
    assert!(forward_error(&disc, &ann, 30) < 1e-8);
}

#[test]
fn regressor_agrees_with_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let disc = random_sets(&mut rng, 50, 3);
    let ann = random_sets(&mut rng, 50, 2);
    let model = fit_regressor(&disc, &ann, 50, Direction::Forward).unwrap();
    let flat = |s: &Vec<Point>| s.iter().flatten().copied().collect::<Vec<f64>>();
    let x: Vec<Vec<f64>> = disc.iter().map(flat).collect();
    let y: Vec<Vec<f64>> = ann.iter().map(flat).collect();
    let b = common::normal_equations(&x, &y);
    for s in &disc[..5] {
        let got: Vec<f64> = model.predict(s).unwrap().into_iter().flatten().collect();
        let row: Vec<f64> = flat(s).into_iter().chain([1.0]).collect();
        for (j, g) in got.iter().enumerate() {
            let want: f64 = row.iter().zip(&b).map(|(r, bj)| r * bj[j]).sum();
            assert!((g - want).abs() < 1e-7 * want.abs().max(1.0), "{g} vs {want}");
        }
    }
}

fn toy_data() -> EvalData {
    EvalData {
        dataset: "B".into(),
        train: toy_corpus(2, 30, Family::B, Split::Train).unwrap(),
        test: toy_corpus(2, 12, Family::B, Split::Test).unwrap(),
        anchors: Family::B.anchor_indices(),
    }
}

#[test]
fn constant_detector_explains_nothing_but_is_trivially_predicted() {
    let data = toy_data();
    let source = ConstantSource((0..6).map(|i| [20.0 + 15.0 * i as f64, 64.0]).collect());
    let opts = EvalOptions {
        n_im: vec![30],
        ..Default::default()
    };
    let fwd = evaluate(&source, Protocol::Forward, &data, &opts, &Provenance::default()).unwrap();
    let bwd = evaluate(&source, Protocol::Backward, &data, &opts, &Provenance::default()).unwrap();
    let (f, b) = (fwd.rows.last().unwrap().value, bwd.rows.last().unwrap().value);
    assert!(f > 5.0, "forward {f}");
    assert!(b < 1e-6, "backward {b}");
}

#[test]
fn constant_detector_is_inconsistent_under_transforms() {
    let data = toy_data();
    let test: Vec<_> = data.test.iter().map(|s| s.image.clone()).collect();
    let source = ConstantSource(vec![[40.0, 40.0], [90.0, 70.0]]);
    let moving = consistency_error(&source, &test, &AugmentRanges::default(), 3, 0).unwrap();
    assert!(moving.mean > 0.0);
    let still = consistency_error(&source, &test, &AugmentRanges::identity(), 3, 0).unwrap();
    assert_eq!(still.mean, 0.0);
    assert_eq!(moving.sorted.len(), 2);
    assert!(moving.sorted.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn reports_round_trip_and_plot() {
    let data = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let source = ConstantSource(vec![[30.0, 30.0], [60.0, 80.0], [100.0, 50.0]]);
    let opts = EvalOptions {
        n_im: vec![1, 5],
        trials: 2,
        ..Default::default()
    };
    let mut reports = Vec::new();
    for p in Protocol::ALL {
        let r = evaluate(&source, p, &data, &opts, &Provenance::default()).unwrap();
        let path = dir.path().join(r.file_name());
        r.write(&path).unwrap();
        let back = EvalReport::read(&path).unwrap();
        assert_eq!(serde_json::to_value(&back).unwrap(), serde_json::to_value(&r).unwrap());
        reports.push(back);
    }
    assert_eq!(reports[0].rows.iter().map(|r| r.n_im).collect::<Vec<_>>(), vec![Some(1), Some(5), Some(30)]);
    let files = plot_reports(&reports, &dir.path().join("plots")).unwrap();
    assert!(!files.is_empty());
    for f in files {
        assert!(std::fs::read_to_string(&f).unwrap().contains("<svg"));
    }
}

#[test]
fn training_images_cannot_be_scored() {
    let mut data = toy_data();
    data.test = toy_corpus(2, 3, Family::B, Split::Train).unwrap();
    let source = ConstantSource(vec![[30.0, 30.0]]);
    assert!(evaluate(&source, Protocol::Consistency, &data, &EvalOptions::default(), &Provenance::default()).is_err());
}

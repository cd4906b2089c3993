mod common;

use landmark_adapt::adapters::{ParamStore, Regime};
use landmark_adapt::netcore::{
    render_gaussians, softargmax, Detector, DetectorConfig, Generator, GeneratorConfig, HeatmapStack, LandmarkSet,
};
use landmark_adapt::Error;
use tch::{Device, Kind, Tensor};

fn pair(landmarks: usize) -> (ParamStore, Detector, Generator) {
    let mut store = ParamStore::new(Device::Cpu);
    let det = Detector::new(
        &mut store,
        DetectorConfig {
            width: 8,
            depth: 2,
            landmarks,
        },
        Regime::Scratch,
        1,
    )
    .unwrap();
    let gen = Generator::new(
        &mut store,
        GeneratorConfig {
            width: 8,
            residual_blocks: 1,
            landmarks,
        },
        1,
    )
    .unwrap();
    (store, det, gen)
}

fn images(n: i64) -> Tensor {
    Tensor::rand([n, 3, 128, 128], (Kind::Float, Device::Cpu))
}

#[test]
fn shapes_and_output_range() {
    let (_s, det, gen) = pair(4);
    let x = images(2);
    let maps = det.forward(&x, false).unwrap();
    assert_eq!(maps.dims(), [2, 4, 32, 32]);
    let cond = render_gaussians(&softargmax(&maps, 10.0), 0.5, 32);
    let y = gen.forward(&x, &cond, false).unwrap();
    assert_eq!(y.size(), [2, 3, 128, 128]);
    assert!(y.min().double_value(&[]) >= 0.0 && y.max().double_value(&[]) <= 1.0);
}

#[test]
fn wrong_input_shape_is_a_shape_error() {
    let (_s, det, _g) = pair(2);
    let r = det.forward(&Tensor::zeros([1, 3, 64, 64], (Kind::Float, Device::Cpu)), false);
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn generator_refuses_raw_heatmaps() {
    let (_s, det, gen) = pair(3);
    let x = images(1);
    let raw = det.forward(&x, false).unwrap();
    assert!(matches!(gen.forward(&x, &raw, false), Err(Error::Contract(_))));
}

#[test]
fn same_seed_same_outputs() {
    let (_a, d1, _) = pair(3);
    let (_b, d2, _) = pair(3);
    let x = images(2);
    let m1 = d1.forward(&x, false).unwrap();
    let m2 = d2.forward(&x, false).unwrap();
    assert_eq!(common::max_abs_diff(&m1.maps, &m2.maps), 0.0);
}

#[test]
fn detector_responds_to_its_input() {
    let (_s, det, _) = pair(3);
    let x = images(1);
    let a = det.forward(&x, false).unwrap();
    let b = det.forward(&(&x * 0.5), false).unwrap();
    assert!(common::max_abs_diff(&a.maps, &b.maps) > 1e-6);
}

#[test]
fn conditioning_carries_gradient_to_landmarks() {
    let (_s, _d, gen) = pair(2);
    let pts = Tensor::from_slice(&[10.0f32, 12.0, 20.0, 5.0])
        .reshape([1, 2, 2])
        .set_requires_grad(true);
    let cond = render_gaussians(&LandmarkSet::new(pts.shallow_clone()).unwrap(), 0.5, 32);
    let y = gen.forward(&images(1), &cond, true).unwrap();
    y.sum(Kind::Float).backward();
    let g = pts.grad();
    assert!(g.defined());
    assert!(g.abs().sum(Kind::Float).double_value(&[]) > 0.0);
}

#[test]
fn larger_beta_moves_towards_the_argmax() {
    // Two peaks of unequal height: sharper softmax leans on the taller one.
    let mut m = vec![0.0f64; 32 * 32];
    m[5 * 32 + 5] = 1.0;
    m[20 * 32 + 25] = 0.8;
    let maps = HeatmapStack::raw(Tensor::from_slice(&m).reshape([1, 1, 32, 32])).unwrap();
    let mut last = f64::INFINITY;
    for beta in [1.0, 5.0, 10.0, 20.0, 50.0] {
        let p = common::f64s(&softargmax(&maps, beta).points);
        let d = (p[0] - 5.0).hypot(p[1] - 5.0);
        assert!(d <= last, "beta {beta}: {d} > {last}");
        last = d;
    }
    assert!(last < 0.01);
}

#[test]
fn composed_bottleneck_matches_finite_differences() {
    // d/dm of Σ render(softargmax(m)) · c, checked on one random entry.
    tch::manual_seed(5);
    let opts = (Kind::Double, Device::Cpu);
    let m = Tensor::randn([1, 2, 8, 8], opts);
    let c = Tensor::randn([1, 2, 8, 8], opts);
    let f = |m: &Tensor| {
        let lm = softargmax(&HeatmapStack::raw(m.shallow_clone()).unwrap(), 10.0);
        (render_gaussians(&lm, 0.5, 8).maps * &c).sum(Kind::Double)
    };
    let mv = m.shallow_clone().set_requires_grad(true);
    f(&mv).backward();
    let grad = common::f64s(&mv.grad());
    let eps = 1e-6;
    for idx in [3usize, 70, 100] {
        let mut plus = common::f64s(&m);
        let mut minus = plus.clone();
        plus[idx] += eps;
        minus[idx] -= eps;
        let t = |v: &[f64]| Tensor::from_slice(v).reshape([1, 2, 8, 8]);
        let fd = (f(&t(&plus)).double_value(&[]) - f(&t(&minus)).double_value(&[])) / (2.0 * eps);
        assert!((fd - grad[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "entry {idx}: {fd} vs {}", grad[idx]);
    }
}

#[test]
fn out_of_grid_landmarks_are_clamped_and_flagged() {
    let pts = Tensor::from_slice(&[-3.0f32, 4.0, 10.0, 10.0]).reshape([1, 2, 2]);
    let g = render_gaussians(&LandmarkSet::new(pts).unwrap(), 0.5, 32);
    let flags: Vec<bool> = Vec::try_from(g.clamped().unwrap().flatten(0, -1)).unwrap();
    assert_eq!(flags, vec![true, false]);
    assert_eq!(g.maps.double_value(&[0, 0, 4, 0]), 1.0);
}

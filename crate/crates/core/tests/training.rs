mod common;

use std::path::Path;
use std::sync::Arc;

use landmark_adapt::adapters::{load_checkpoint, mode1_tensor, Checkpoint, Group, Regime};
use landmark_adapt::data::{toy_corpus, Family, ImageTensor, Split};
use landmark_adapt::netcore::images_to_tensor;
use landmark_adapt::training::{
    adapt, batch::pair_batch, read_log, total_loss, FeatureExtractor, Model, PairPool, RunDir, TrainingConfig,
};
use tch::{Device, Tensor};

fn pool(n: usize) -> PairPool {
    let images: Vec<ImageTensor> = toy_corpus(4, n, Family::B, Split::Train)
        .unwrap()
        .into_iter()
        .map(|s| s.image)
        .collect();
    PairPool::Images(Arc::new(images))
}

fn core_checkpoint(dir: &Path, landmarks: usize) -> Checkpoint {
    let path = dir.join("core.bin");
    common::write_core(&path, &common::tiny(Regime::Pretrain, landmarks));
    load_checkpoint(&path).unwrap()
}

fn run(root: &Path, cfg: &TrainingConfig, core: Option<&Checkpoint>) -> (RunDir, Checkpoint) {
    let dir = RunDir::create(root, cfg.regime).unwrap();
    let out = adapt(cfg, pool(8), core, &dir, false, Device::Cpu).unwrap();
    let ckpt = load_checkpoint(&out.checkpoint).unwrap();
    (dir, ckpt)
}

fn tensors_equal(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.entries.len() == b.entries.len()
        && a
            .entries
            .iter()
            .zip(&b.entries)
            .all(|(x, y)| x.name == y.name && common::max_abs_diff(&x.tensor, &y.tensor) == 0.0)
}

fn one_batch(cfg: &TrainingConfig) -> (Tensor, Tensor) {
    let imgs = pool(4);
    pair_batch(&imgs, &cfg.pairs, 2, 0, 0, 0).unwrap().tensors(Device::Cpu)
}

#[test]
fn proposed_training_leaves_the_core_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let core = core_checkpoint(dir.path(), 3);
    let cfg = common::tiny(Regime::Proposed, 3);
    let (_, after) = run(dir.path(), &cfg, Some(&core));
    let mut kernels = 0;
    for e in after.group(Group::Core) {
        assert_eq!(common::max_abs_diff(&e.tensor, core.get(&e.name).unwrap()), 0.0, "{}", e.name);
        kernels += 1;
    }
    assert!(kernels > 0);
    assert!(after.group(Group::Adapters).any(|e| {
        let n = e.tensor.size()[0];
        common::max_abs_diff(&e.tensor, &Tensor::eye(n, (tch::Kind::Float, Device::Cpu))) > 0.0
    }));
}

#[test]
fn every_trainable_tensor_receives_gradient_and_the_core_none() {
    let dir = tempfile::tempdir().unwrap();
    let core = core_checkpoint(dir.path(), 3);
    let cfg = common::tiny(Regime::Proposed, 3);
    let model = Model::with_core(&cfg, Some(&core), Device::Cpu).unwrap();
    let fx = FeatureExtractor::load(&cfg.extractor, &cfg.perceptual_layers, Device::Cpu).unwrap();
    let (y, yp) = one_batch(&cfg);
    let gen = model.generator.as_ref().unwrap();
    let parts = total_loss(&y, &yp, &model.detector, gen, &fx, cfg.bottleneck, cfg.loss, true).unwrap();
    parts.total.backward();
    for (name, p) in model.store.iter() {
        let g = p.tensor.grad();
        if p.group == Group::Core {
            assert!(!g.defined(), "{name} got a gradient");
        } else if p.trainable {
            assert!(g.defined(), "{name} has no gradient");
            assert!(g.abs().sum(tch::Kind::Float).double_value(&[]) > 0.0, "{name} gradient is zero");
        }
    }
}

#[test]
fn adapted_convolution_gradient_matches_finite_differences() {
    // The differentiable path of an adapted layer, in double precision.
    tch::manual_seed(11);
    let opts = (tch::Kind::Double, Device::Cpu);
    let core = Tensor::randn([4, 3, 3, 3], opts);
    let x = Tensor::randn([2, 3, 6, 6], opts);
    let c = Tensor::randn([2, 4, 6, 6], opts);
    let f = |w: &Tensor| {
        (x.conv2d(&mode1_tensor(w, &core), None::<Tensor>, [1, 1], [1, 1], [1, 1], 1) * &c).sum(tch::Kind::Double)
    };
    let w0 = Tensor::eye(4, opts) + Tensor::randn([4, 4], opts) * 0.1;
    let w = w0.copy().set_requires_grad(true);
    f(&w).backward();
    let grad = common::f64s(&w.grad());
    let eps = 1e-6;
    for idx in 0..16 {
        let shift = |d: f64| {
            let mut v = common::f64s(&w0);
            v[idx] += d;
            f(&Tensor::from_slice(&v).reshape([4, 4])).double_value(&[])
        };
        let fd = (shift(eps) - shift(-eps)) / (2.0 * eps);
        assert!((fd - grad[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "entry {idx}: {fd} vs {}", grad[idx]);
    }
}

#[test]
fn adapter_gradient_predicts_the_loss_change() {
    // Single-precision losses are too coarse for per-entry differences, so
    // step every adapter along the full gradient and compare the slope with
    // ‖g‖². ReLU and max-pool kinks bend the loss even at this step (the slope
    // still climbs towards ‖g‖² as the step shrinks), hence the loose bound; a
    // gradient off by a factor of two misses it by 50% or more.
    let dir = tempfile::tempdir().unwrap();
    let core = core_checkpoint(dir.path(), 3);
    let cfg = common::tiny(Regime::Proposed, 3);
    let model = Model::with_core(&cfg, Some(&core), Device::Cpu).unwrap();
    let fx = FeatureExtractor::load(&cfg.extractor, &cfg.perceptual_layers, Device::Cpu).unwrap();
    let (y, yp) = one_batch(&cfg);
    let gen = model.generator.as_ref().unwrap();
    // Evaluation mode, so the loss is a fixed function of the parameters.
    let loss = || {
        total_loss(&y, &yp, &model.detector, gen, &fx, cfg.bottleneck, cfg.loss, false)
            .unwrap()
            .total
    };
    model.store.zero_grad();
    loss().backward();
    let adapters: Vec<(String, Tensor, Tensor)> = model
        .store
        .iter()
        .filter(|(_, p)| p.group == Group::Adapters)
        .map(|(n, p)| (n.to_string(), p.tensor.detach().copy(), p.tensor.grad().copy()))
        .collect();
    let norm2: f64 = adapters.iter().map(|(_, _, g)| g.square().sum(tch::Kind::Double).double_value(&[])).sum();
    let at = |t: f64| {
        for (n, base, g) in &adapters {
            model.store.copy_in(n, &(base + g * t)).unwrap();
        }
        tch::no_grad(|| loss().double_value(&[]))
    };
    let t = 1e-3 / norm2.sqrt();
    let slope = (at(t) - at(-t)) / (2.0 * t);
    at(0.0);
    let rel = (slope - norm2).abs() / norm2;
    assert!(rel < 0.25, "slope {slope} vs squared gradient norm {norm2}");
}

#[test]
fn learning_rate_decays_tenfold_every_thirty_epochs() {
    let c = TrainingConfig::paper(Regime::Proposed, 10);
    let lr = [c.learning_rate_at(0), c.learning_rate_at(29), c.learning_rate_at(30), c.learning_rate_at(60)];
    assert_eq!(lr[0], 1e-4);
    assert_eq!(lr[1], 1e-4);
    assert!((lr[2] - 1e-5).abs() < 1e-18);
    assert!((lr[3] - 1e-6).abs() < 1e-18);
}

#[test]
fn zero_epochs_saves_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(Regime::Scratch, 3);
    cfg.epochs = 0;
    let (rd, ckpt) = run(dir.path(), &cfg, None);
    let init = Model::build(&cfg, Device::Cpu).unwrap();
    for e in &ckpt.entries {
        assert_eq!(common::max_abs_diff(&e.tensor, &init.store.get(&e.name).unwrap().tensor), 0.0, "{}", e.name);
    }
    assert!(read_log(&rd.log_path()).unwrap().is_empty());
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let core = core_checkpoint(dir.path(), 3);
    let cfg = common::tiny(Regime::Finetune, 3);
    let (a, ca) = run(&dir.path().join("a"), &cfg, Some(&core));
    let (b, cb) = run(&dir.path().join("b"), &cfg, Some(&core));
    assert_eq!(
        std::fs::read(a.log_path()).unwrap(),
        std::fs::read(b.log_path()).unwrap()
    );
    assert!(tensors_equal(&ca, &cb));
}

#[test]
fn checkpoint_round_trip_reproduces_the_detector() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("core.bin");
    let cfg = common::tiny(Regime::Pretrain, 3);
    let live = common::write_core(&path, &cfg);
    let ckpt = load_checkpoint(&path).unwrap();
    let loaded = Model::from_checkpoint(&ckpt, Device::Cpu).unwrap();
    let imgs = toy_corpus(9, 3, Family::B, Split::Test).unwrap();
    let x = images_to_tensor(&imgs.iter().map(|s| &s.image).collect::<Vec<_>>(), Device::Cpu);
    let ma = tch::no_grad(|| live.detector.forward(&x, false)).unwrap();
    let mb = tch::no_grad(|| loaded.detector.forward(&x, false)).unwrap();
    assert!(common::max_abs_diff(&ma.maps, &mb.maps) <= 1e-6);
    assert_eq!(ckpt.meta.config_hash, cfg.hash());
    assert_eq!(ckpt.entries.len(), live.store.len());
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(Regime::Scratch, 3);
    cfg.epochs = 2;
    let (full, full_ckpt) = run(&dir.path().join("full"), &cfg, None);
    let (cut, _) = run(&dir.path().join("cut"), &cfg, None);
    // Pretend the run died during the second epoch.
    std::fs::remove_file(cut.checkpoint(2)).unwrap();
    let out = adapt(&cfg, pool(8), None, &cut, true, Device::Cpu).unwrap();
    let resumed = load_checkpoint(&out.checkpoint).unwrap();
    assert!(tensors_equal(&full_ckpt, &resumed));
    assert_eq!(read_log(&full.log_path()).unwrap(), read_log(&cut.log_path()).unwrap());
}

#[test]
fn resume_refuses_a_changed_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny(Regime::Scratch, 3);
    let (rd, _) = run(dir.path(), &cfg, None);
    let mut other = cfg.clone();
    other.learning_rate *= 2.0;
    assert!(adapt(&other, pool(8), None, &rd, true, Device::Cpu).is_err());
}

#[test]
fn reconstruction_loss_falls() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny(Regime::Scratch, 3);
    cfg.iterations_per_epoch = 40;
    cfg.checkpoint_every = 1;
    let rd = RunDir::create(dir.path(), cfg.regime).unwrap();
    adapt(&cfg, pool(4), None, &rd, false, Device::Cpu).unwrap();
    let rows = read_log(&rd.log_path()).unwrap();
    let mean = |r: &[landmark_adapt::training::LogRow]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&rows[..5]), mean(&rows[rows.len() - 5..]));
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn finetune_without_a_core_is_refused() {
    let cfg = common::tiny(Regime::Finetune, 3);
    assert!(Model::with_core(&cfg, None, Device::Cpu).is_err());
}

//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use landmark_adapt::adapters::{save_checkpoint, Group, Regime};
use landmark_adapt::training::{ArchConfig, Model, TrainingConfig};
use tch::{Device, Kind, Tensor};

/// A detector and generator small enough for many optimisation steps per second.
pub fn tiny(regime: Regime, landmarks: usize) -> TrainingConfig {
    let mut c = TrainingConfig::desk(regime, landmarks);
    c.arch = ArchConfig {
        detector_width: 8,
        detector_depth: 2,
        generator_width: 8,
        generator_blocks: 1,
    };
    c.epochs = 1;
    c.iterations_per_epoch = 4;
    c.batch_size = 2;
    c.checkpoint_every = 1;
    c.deterministic = true;
    c
}

/// Saves a freshly built pretrain model with perturbed norm statistics, so a
/// checkpoint copy that forgot them would be noticed.
pub fn write_core(path: &Path, config: &TrainingConfig) -> Model {
    assert_eq!(config.regime, Regime::Pretrain);
    let model = Model::build(config, Device::Cpu).unwrap();
    tch::manual_seed(17);
    for (name, p) in model.store.iter() {
        if p.group != Group::Norm {
            continue;
        }
        let v = if name.ends_with("running_var") {
            Tensor::rand_like(&p.tensor) + 0.5
        } else {
            Tensor::randn_like(&p.tensor) * 0.3 + if name.ends_with("weight") { 1.0 } else { 0.0 }
        };
        model.store.copy_in(name, &v).unwrap();
    }
    save_checkpoint(path, &model.store, &model.meta(0, 0), &[]).unwrap();
    model
}

pub fn f64s(t: &Tensor) -> Vec<f64> {
    Vec::<f64>::try_from(t.to_kind(Kind::Double).flatten(0, -1)).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a.to_kind(Kind::Double) - b.to_kind(Kind::Double)).abs().max().double_value(&[])
}

/// Four nested loops: `T[o,i,a,b] = Σ_o' W[o,o'] · K[o',i,a,b]`.
pub fn mode1_oracle(w: &[f64], kernel: &[f64], shape: [usize; 4]) -> Vec<f64> {
    let [co, ci, kh, kw] = shape;
    let mut out = vec![0.0; kernel.len()];
    for o in 0..co {
        for i in 0..ci {
            for a in 0..kh {
                for b in 0..kw {
                    let mut s = 0.0;
                    for p in 0..co {
                        s += w[o * co + p] * kernel[((p * ci + i) * kh + a) * kw + b];
                    }
                    out[((o * ci + i) * kh + a) * kw + b] = s;
                }
            }
        }
    }
    out
}

/// `‖a − b‖ / ‖b‖` (plain difference norm when `b` is zero).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Least squares with intercept by the normal equations `(XᵀX) B = XᵀY`,
/// solved with Gauss-Jordan elimination and partial pivoting. Rows of `x` are
/// samples; returns `B` as `(p + 1) × q`, intercept last.
pub fn normal_equations(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = x[0].len() + 1;
    let q = y[0].len();
    let rows: Vec<Vec<f64>> = x.iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
    let mut a = vec![vec![0.0; p + q]; p];
    for (r, t) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
            for j in 0..q {
                a[i][p + j] += r[i] * t[j];
            }
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != c {
                let f = a[r][c];
                let row = a[c].clone();
                for (v, w) in a[r].iter_mut().zip(&row) {
                    *v -= f * w;
                }
            }
        }
    }
    a.into_iter().map(|r| r[p..].to_vec()).collect()
}

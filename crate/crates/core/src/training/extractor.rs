use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::{Device, Kind, Tensor};

use crate::adapters::read_f32_tensors;
use crate::error::{Error, Result};
use crate::netcore::channels_last;
use crate::seed::{stream_rng, tags};

/// Channel statistics the extractor's inputs are normalised to.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Where perceptual features come from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExtractorConfig {
    /// 19-layer VGG trunk from a safetensors file with `features.{i}.weight` /
    /// `features.{i}.bias` entries (torchvision naming). Taps: `relu1_2`,
    /// `relu2_2`, `relu3_3`, `relu4_3`.
    Vgg19 { weights: PathBuf },
    /// Small fixed random-weight network (4 stages of one 3×3 conv + ReLU,
    /// widths 8/16/32/64, 2×2 pooling before every stage, so even `stage1`
    /// sees half resolution). Taps: `stage1`..`stage4`.
    Mini { seed: u64 },
}

impl ExtractorConfig {
    pub fn default_layers(&self) -> Vec<String> {
        let names: &[&str] = match self {
            ExtractorConfig::Vgg19 { .. } => &VGG_TAPS,
            ExtractorConfig::Mini { .. } => &MINI_TAPS,
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

const VGG_TAPS: [&str; 4] = ["relu1_2", "relu2_2", "relu3_3", "relu4_3"];
const MINI_TAPS: [&str; 4] = ["stage1", "stage2", "stage3", "stage4"];

enum Op {
    Conv { weight: Tensor, bias: Tensor },
    Relu { tap: Option<&'static str> },
    Pool,
}

/// Fixed feature network; weights never receive gradients.
pub struct FeatureExtractor {
    ops: Vec<Op>,
    taps: Vec<usize>,
    tap_names: Vec<String>,
    mean: Tensor,
    std: Tensor,
}

// (torchvision index, c_in, c_out) of the convolutions up to relu4_3.
const VGG_CONVS: [(usize, i64, i64); 11] = [
    (0, 3, 64),
    (2, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
    (14, 256, 256),
    (16, 256, 256),
    (19, 256, 512),
    (21, 512, 512),
    (23, 512, 512),
];

impl FeatureExtractor {
    /// Builds the extractor and checks that every requested layer exists.
    /// A missing or malformed weight file is an error; there is no fallback.
    pub fn load(config: &ExtractorConfig, layers: &[String], device: Device) -> Result<Self> {
        let ops = match config {
            ExtractorConfig::Vgg19 { weights } => vgg_ops(weights)?,
            ExtractorConfig::Mini { seed } => mini_ops(*seed),
        };
        let ops: Vec<Op> = ops
            .into_iter()
            .map(|op| match op {
                Op::Conv { weight, bias } => Op::Conv {
                    weight: weight.to_device(device).set_requires_grad(false),
                    bias: bias.to_device(device).set_requires_grad(false),
                },
                other => other,
            })
            .collect();
        if layers.is_empty() {
            return Err(Error::Config("perceptual loss needs at least one layer".into()));
        }
        let mut taps = Vec::new();
        for name in layers {
            let idx = ops
                .iter()
                .position(|op| matches!(op, Op::Relu { tap: Some(t) } if t == name))
                .ok_or_else(|| {
                    Error::Config(format!("feature extractor has no layer `{name}`"))
                })?;
            taps.push(idx);
        }
        let stat = |v: &[f64; 3]| {
            Tensor::from_slice(v)
                .to_kind(Kind::Float)
                .reshape([1, 3, 1, 1])
                .to_device(device)
        };
        Ok(Self {
            ops,
            taps,
            tap_names: layers.to_vec(),
            mean: stat(&IMAGENET_MEAN),
            std: stat(&IMAGENET_STD),
        })
    }

    pub fn layers(&self) -> &[String] {
        &self.tap_names
    }

    /// Activations at the configured layers for `(N, 3, H, W)` images in `[0, 1]`.
    pub fn features(&self, images: &Tensor) -> Vec<Tensor> {
        let last = *self.taps.iter().max().expect("at least one tap");
        let mut x = channels_last(&((images - &self.mean) / &self.std));
        let mut out: Vec<Option<Tensor>> = (0..self.taps.len()).map(|_| None).collect();
        for (i, op) in self.ops.iter().enumerate().take(last + 1) {
            x = match op {
                Op::Conv { weight, bias } => x.conv2d(weight, Some(bias), [1, 1], [1, 1], [1, 1], 1),
                Op::Relu { .. } => x.relu(),
                Op::Pool => x.max_pool2d([2, 2], [2, 2], [0, 0], [1, 1], false),
            };
            for (slot, &t) in self.taps.iter().enumerate() {
                if t == i {
                    out[slot] = Some(x.shallow_clone());
                }
            }
        }
        out.into_iter().map(|t| t.expect("tap reached")).collect()
    }
}

fn vgg_ops(path: &Path) -> Result<Vec<Op>> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "VGG-19 weights not found at {}; convert torchvision's vgg19 features to safetensors \
             or select the `mini` extractor explicitly",
            path.display()
        )));
    }
    let mut tensors = read_f32_tensors(path)?;
    let mut take = |name: String, shape: &[i64]| -> Result<Tensor> {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::Config(format!("{}: missing `{name}`", path.display())))?;
        if t.size() != shape {
            return Err(Error::Config(format!(
                "{}: `{name}` has shape {:?}, expected {shape:?}",
                path.display(),
                t.size()
            )));
        }
        Ok(t)
    };
    let mut ops = Vec::new();
    let names = [
        None,
        Some("relu1_2"),
        None,
        Some("relu2_2"),
        None,
        None,
        Some("relu3_3"),
        None,
        None,
        None,
        Some("relu4_3"),
    ];
    for (n, &(idx, c_in, c_out)) in VGG_CONVS.iter().enumerate() {
        if matches!(idx, 5 | 10 | 19) {
            ops.push(Op::Pool);
        }
        ops.push(Op::Conv {
            weight: take(format!("features.{idx}.weight"), &[c_out, c_in, 3, 3])?,
            bias: take(format!("features.{idx}.bias"), &[c_out])?,
        });
        ops.push(Op::Relu { tap: names[n] });
    }
    Ok(ops)
}

fn mini_ops(seed: u64) -> Vec<Op> {
    let widths = [3i64, 8, 16, 32, 64];
    let mut rng = stream_rng(seed, &[tags::EXTRACTOR]);
    let mut ops = Vec::new();
    for s in 0..4 {
        ops.push(Op::Pool);
        let (c_in, c_out) = (widths[s], widths[s + 1]);
        let bound = (6.0 / (c_in * 9) as f64).sqrt();
        let w: Vec<f32> = (0..c_out * c_in * 9)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect();
        ops.push(Op::Conv {
            weight: Tensor::from_slice(&w).reshape([c_out, c_in, 3, 3]),
            bias: Tensor::zeros([c_out], (Kind::Float, Device::Cpu)),
        });
        ops.push(Op::Relu {
            tap: Some(MINI_TAPS[s]),
        });
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_vgg_weights_is_an_error() {
        let cfg = ExtractorConfig::Vgg19 {
            weights: "/nonexistent/vgg19.safetensors".into(),
        };
        let err = FeatureExtractor::load(&cfg, &cfg.default_layers(), Device::Cpu);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn unknown_layer_is_rejected() {
        let cfg = ExtractorConfig::Mini { seed: 0 };
        assert!(FeatureExtractor::load(&cfg, &["relu1_2".to_string()], Device::Cpu).is_err());
    }

    #[test]
    fn mini_features_have_expected_shapes_and_are_stable() {
        let cfg = ExtractorConfig::Mini { seed: 0 };
        let fx = FeatureExtractor::load(&cfg, &cfg.default_layers(), Device::Cpu).unwrap();
        let x = Tensor::rand([2, 3, 128, 128], (Kind::Float, Device::Cpu));
        let f = fx.features(&x);
        let shapes: Vec<_> = f.iter().map(|t| t.size()).collect();
        assert_eq!(
            shapes,
            vec![vec![2, 8, 64, 64], vec![2, 16, 32, 32], vec![2, 32, 16, 16], vec![2, 64, 8, 8]]
        );
        let g = fx.features(&x);
        assert!(f.iter().zip(&g).all(|(a, b)| a.equal(b)));
    }

    fn fake_vgg(path: &Path, skip: Option<&str>) {
        let mut owned = Vec::new();
        for &(idx, c_in, c_out) in &VGG_CONVS {
            let w: Vec<f32> = (0..c_out * c_in * 9).map(|i| ((i % 7) as f32 - 3.0) * 0.01).collect();
            owned.push((format!("features.{idx}.weight"), vec![c_out as usize, c_in as usize, 3, 3], w));
            owned.push((format!("features.{idx}.bias"), vec![c_out as usize], vec![0.01; c_out as usize]));
        }
        owned.retain(|(n, _, _)| Some(n.as_str()) != skip);
        let bytes: Vec<Vec<u8>> = owned
            .iter()
            .map(|(_, _, v)| v.iter().flat_map(|x| x.to_le_bytes()).collect())
            .collect();
        let views: Vec<(String, safetensors::tensor::TensorView<'_>)> = owned
            .iter()
            .zip(&bytes)
            .map(|((n, shape, _), b)| {
                let v = safetensors::tensor::TensorView::new(safetensors::Dtype::F32, shape.clone(), b).unwrap();
                (n.clone(), v)
            })
            .collect();
        safetensors::serialize_to_file(views, &None, path).unwrap();
    }

    #[test]
    fn vgg_weights_load_from_torchvision_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg19.safetensors");
        fake_vgg(&path, None);
        let cfg = ExtractorConfig::Vgg19 { weights: path.clone() };
        let fx = FeatureExtractor::load(&cfg, &cfg.default_layers(), Device::Cpu).unwrap();
        let f = fx.features(&Tensor::rand([1, 3, 128, 128], (Kind::Float, Device::Cpu)));
        let shapes: Vec<_> = f.iter().map(|t| t.size()).collect();
        assert_eq!(
            shapes,
            vec![vec![1, 64, 128, 128], vec![1, 128, 64, 64], vec![1, 256, 32, 32], vec![1, 512, 16, 16]]
        );
        fake_vgg(&path, Some("features.21.bias"));
        let err = FeatureExtractor::load(&cfg, &cfg.default_layers(), Device::Cpu);
        assert!(matches!(err, Err(Error::Config(m)) if m.contains("features.21.bias")));
    }
}

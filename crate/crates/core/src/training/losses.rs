use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::extractor::FeatureExtractor;
use crate::error::{Error, Result};
use crate::netcore::{render_gaussians, softargmax, Detector, Generator, HeatmapStack};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.size(),
            b.size()
        )));
    }
    Ok(())
}

/// Mean squared difference between predicted and target heatmaps.
pub fn supervised_loss(pred: &HeatmapStack, target: &HeatmapStack) -> Result<Tensor> {
    same_shape(&pred.maps, &target.maps, "supervised loss")?;
    Ok((&pred.maps - &target.maps).square().mean(Kind::Float))
}

/// Mean squared pixel difference.
pub fn pixel_loss(recon: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(recon, target, "pixel loss")?;
    Ok((recon - target).square().mean(Kind::Float))
}

/// Sum over the extractor's layers of the mean absolute feature difference.
/// Gradients flow into both arguments.
pub fn perceptual_loss(recon: &Tensor, target: &Tensor, fx: &FeatureExtractor) -> Result<Tensor> {
    same_shape(recon, target, "perceptual loss")?;
    let a = fx.features(recon);
    let b = fx.features(target);
    let mut total = Tensor::zeros([], (Kind::Float, recon.device()));
    for (fa, fb) in a.iter().zip(&b) {
        total += (fa - fb).abs().mean(Kind::Float);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            perceptual: 1.0,
        }
    }
}

/// Reconstruction objective and its parts.
pub struct LossParts {
    pub total: Tensor,
    pub pixel: f64,
    pub perceptual: f64,
}

/// Bottleneck settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bottleneck {
    pub beta: f64,
    pub sigma2: f64,
}

impl Default for Bottleneck {
    fn default() -> Self {
        Self {
            beta: crate::netcore::DEFAULT_BETA,
            sigma2: crate::netcore::DEFAULT_SIGMA2,
        }
    }
}

/// Reconstructs `y` from `y′` conditioned on Gaussians re-rendered from the
/// landmarks the detector finds in `y`, and scores the reconstruction.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    y: &Tensor,
    y_prime: &Tensor,
    detector: &Detector,
    generator: &Generator,
    fx: &FeatureExtractor,
    bottleneck: Bottleneck,
    weights: LossWeights,
    train: bool,
) -> Result<LossParts> {
    let raw = detector.forward(y, train)?;
    let landmarks = softargmax(&raw, bottleneck.beta);
    let size = raw.dims()[2] as usize;
    let cond = render_gaussians(&landmarks, bottleneck.sigma2, size);
    let recon = generator.forward(y_prime, &cond, train)?;
    let pixel = pixel_loss(&recon, y)?;
    let perceptual = perceptual_loss(&recon, y, fx)?;
    let total = &pixel * weights.pixel + &perceptual * weights.perceptual;
    Ok(LossParts {
        pixel: pixel.double_value(&[]),
        perceptual: perceptual.double_value(&[]),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::extractor::ExtractorConfig;
    use tch::Device;

    fn opts() -> (Kind, Device) {
        (Kind::Float, Device::Cpu)
    }

    #[test]
    fn closed_forms() {
        let t = Tensor::rand([2, 3, 8, 8], opts());
        let a = HeatmapStack::raw(t.shallow_clone()).unwrap();
        let b = HeatmapStack::raw(&t + 0.25).unwrap();
        assert_eq!(supervised_loss(&a, &a).unwrap().double_value(&[]), 0.0);
        let c2 = supervised_loss(&a, &b).unwrap().double_value(&[]);
        assert!((c2 - 0.0625).abs() < 1e-7);
        let zeros = Tensor::zeros([1, 3, 128, 128], opts());
        let ones = Tensor::ones([1, 3, 128, 128], opts());
        assert_eq!(pixel_loss(&zeros, &ones).unwrap().double_value(&[]), 1.0);
        assert!(pixel_loss(&zeros, &Tensor::zeros([1, 3, 64, 64], opts())).is_err());
    }

    #[test]
    fn perceptual_is_symmetric_zero_on_equal_and_sees_patches() {
        let cfg = ExtractorConfig::Mini { seed: 1 };
        let fx = FeatureExtractor::load(&cfg, &cfg.default_layers(), Device::Cpu).unwrap();
        let a = Tensor::rand([1, 3, 128, 128], opts());
        let b = a.copy();
        let _ = b.narrow(2, 40, 32).narrow(3, 40, 32).fill_(0.0);
        assert_eq!(perceptual_loss(&a, &a, &fx).unwrap().double_value(&[]), 0.0);
        let ab = perceptual_loss(&a, &b, &fx).unwrap().double_value(&[]);
        let ba = perceptual_loss(&b, &a, &fx).unwrap().double_value(&[]);
        assert!(ab > 0.0);
        assert!((ab - ba).abs() <= 1e-6 * ab);
    }
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extractor::ExtractorConfig;
use super::losses::{Bottleneck, LossWeights};
use crate::adapters::Regime;
use crate::data::{AugmentRanges, PairConfig};
use crate::error::{Error, Result};
use crate::netcore::{DetectorConfig, GeneratorConfig};

/// Network geometry (landmark count lives on [`TrainingConfig`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub detector_width: usize,
    pub detector_depth: usize,
    pub generator_width: usize,
    pub generator_blocks: usize,
}

impl ArchConfig {
    pub fn reference() -> Self {
        Self {
            detector_width: 256,
            detector_depth: 4,
            generator_width: 256,
            generator_blocks: 6,
        }
    }

    /// Narrow networks sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            detector_width: 32,
            detector_depth: 4,
            generator_width: 16,
            generator_blocks: 6,
        }
    }
}

/// Everything that determines a training run's numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub regime: Regime,
    pub landmarks: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    pub loss: LossWeights,
    pub bottleneck: Bottleneck,
    pub extractor: ExtractorConfig,
    pub perceptual_layers: Vec<String>,
    pub pairs: PairConfig,
    /// Augmentation of supervised batches (points follow the warp).
    pub pretrain_augment: AugmentRanges,
    /// Save a checkpoint every this many epochs (the last epoch is always saved).
    pub checkpoint_every: usize,
    /// Single-threaded kernels so two runs produce identical numbers.
    pub deterministic: bool,
}

impl TrainingConfig {
    /// Full-scale schedule: reference networks, batch 48, 80 × 2,500 iterations,
    /// decay 0.1 every 30 epochs, VGG-19 perceptual features.
    pub fn paper(regime: Regime, landmarks: usize) -> Self {
        let extractor = ExtractorConfig::Vgg19 {
            weights: "weights/vgg19.safetensors".into(),
        };
        Self {
            regime,
            landmarks,
            epochs: 80,
            iterations_per_epoch: 2500,
            batch_size: 48,
            learning_rate: 1e-4,
            decay_factor: 0.1,
            decay_every: 30,
            adam_betas: [0.0, 0.9],
            adam_eps: 1e-8,
            seed: 0,
            arch: ArchConfig::reference(),
            loss: LossWeights::default(),
            bottleneck: Bottleneck::default(),
            perceptual_layers: extractor.default_layers(),
            extractor,
            pairs: PairConfig::default(),
            pretrain_augment: AugmentRanges::default(),
            checkpoint_every: 1,
            deterministic: false,
        }
    }

    /// Toy-corpus schedule: desk networks, batch 16, 20 × 200 iterations and the
    /// small random-feature extractor. Supervised pretraining uses 10 passes over
    /// a 2,000-image corpus instead.
    pub fn desk(regime: Regime, landmarks: usize) -> Self {
        let extractor = ExtractorConfig::Mini { seed: 0 };
        let (epochs, iterations) = match regime {
            Regime::Pretrain => (10, 125),
            _ => (20, 200),
        };
        Self {
            epochs,
            iterations_per_epoch: iterations,
            batch_size: 16,
            learning_rate: 1e-3,
            arch: ArchConfig::desk(),
            perceptual_layers: extractor.default_layers(),
            extractor,
            checkpoint_every: 5,
            ..Self::paper(regime, landmarks)
        }
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            width: self.arch.detector_width,
            depth: self.arch.detector_depth,
            landmarks: self.landmarks,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            width: self.arch.generator_width,
            residual_blocks: self.arch.generator_blocks,
            landmarks: self.landmarks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("landmarks", self.landmarks),
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("batch_size", self.batch_size),
            ("decay_every", self.decay_every),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor {} must lie in (0, 1]", self.decay_factor)));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) || self.adam_eps <= 0.0 {
            return Err(Error::Config(format!("invalid Adam settings {:?}", self.adam_betas)));
        }
        if !(self.bottleneck.beta > 0.0 && self.bottleneck.sigma2 > 0.0) {
            return Err(Error::Config("softargmax beta and Gaussian variance must be positive".into()));
        }
        if self.loss.pixel < 0.0 || self.loss.perceptual < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        self.detector().validate()?;
        if self.regime != Regime::Pretrain {
            self.generator().validate()?;
        }
        self.pairs.validate()?;
        self.pretrain_augment.validate()
    }

    /// Learning rate during epoch `epoch` (zero-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.iterations_per_epoch) as u64
    }

    /// Hex SHA-256 of the config's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_value(self).expect("config serialises");
        config_hash(&json)
    }
}

/// Hex SHA-256 of a JSON value's serialisation (object keys are sorted by
/// `serde_json`'s default map, so this is canonical).
pub fn config_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_schedule_decays() {
        for r in Regime::ALL {
            TrainingConfig::paper(r, 10).validate().unwrap();
            TrainingConfig::desk(r, 10).validate().unwrap();
        }
        let c = TrainingConfig::paper(Regime::Proposed, 10);
        assert_eq!(c.learning_rate_at(0), 1e-4);
        assert_eq!(c.learning_rate_at(29), 1e-4);
        assert!((c.learning_rate_at(30) - 1e-5).abs() < 1e-18);
        assert!((c.learning_rate_at(60) - 1e-6).abs() < 1e-19);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainingConfig::desk(Regime::Scratch, 10);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn zero_counts_are_rejected() {
        let mut c = TrainingConfig::desk(Regime::Scratch, 10);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}

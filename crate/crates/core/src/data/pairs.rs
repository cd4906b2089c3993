use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transform::{sample_transform, warp, AugmentRanges, SimilarityTransform};
use super::ImageTensor;
use crate::error::{Error, Result};

/// How the deformed image `y′` is obtained from the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// `y′` is a random similarity warp of `y`.
    Warp,
    /// `y′` is another frame of the same clip, within `window` frames.
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub mode: PairMode,
    /// Ranges for the deformation relating `y′` to `y`.
    pub deform: AugmentRanges,
    /// Optional extra augmentation applied to the source before pairing.
    pub augment: Option<AugmentRanges>,
    /// Flip both images of a pair horizontally with probability 1/2.
    pub flip: bool,
    /// Temporal mode: maximum frame offset between `y` and `y′`.
    pub window: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            mode: PairMode::Warp,
            deform: AugmentRanges::default(),
            augment: None,
            flip: false,
            window: 100,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        self.deform.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

pub enum PairSource<'a> {
    Image(&'a ImageTensor),
    Clip(&'a [ImageTensor]),
}

/// A reconstruction target `y` and its deformed counterpart `y′`.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub target: ImageTensor,
    pub deformed: ImageTensor,
    /// `y′ = warp(y, transform)` in warp mode; `None` for temporal pairs.
    pub transform: Option<SimilarityTransform>,
    pub flipped: bool,
    /// Temporal mode: index of `y′` minus index of `y`.
    pub frame_offset: Option<i64>,
}

pub fn make_pair(
    source: PairSource<'_>,
    config: &PairConfig,
    rng: &mut impl Rng,
) -> Result<TrainingPair> {
    config.validate()?;
    let mut pair = match (config.mode, source) {
        (PairMode::Warp, PairSource::Image(image)) => warp_pair(image, config, rng)?,
        (PairMode::Warp, PairSource::Clip(frames)) => {
            if frames.is_empty() {
                return Err(Error::Data("clip has no frames".into()));
            }
            let i = rng.random_range(0..frames.len());
            warp_pair(&frames[i], config, rng)?
        }
        (PairMode::Temporal, PairSource::Clip(frames)) => temporal_pair(frames, config, rng)?,
        (PairMode::Temporal, PairSource::Image(_)) => {
            return Err(Error::Argument("temporal pairs require a clip".into()))
        }
    };
    if config.flip && rng.random_bool(0.5) {
        pair.target = pair.target.flip_horizontal();
        pair.deformed = pair.deformed.flip_horizontal();
        pair.transform = pair.transform.map(|t| t.mirrored());
        pair.flipped = true;
    }
    Ok(pair)
}

fn warp_pair(image: &ImageTensor, config: &PairConfig, rng: &mut impl Rng) -> Result<TrainingPair> {
    let base = match &config.augment {
        Some(ranges) => sample_transform(ranges, rng)?,
        None => SimilarityTransform::identity(),
    };
    let deform = sample_transform(&config.deform, rng)?;
    // Warp the source once per output so y′ does not accumulate two interpolations.
    let target = warp(image, &base);
    let deformed = warp(image, &deform.compose(&base));
    Ok(TrainingPair {
        target,
        deformed,
        transform: Some(deform),
        flipped: false,
        frame_offset: None,
    })
}

fn temporal_pair(
    frames: &[ImageTensor],
    config: &PairConfig,
    rng: &mut impl Rng,
) -> Result<TrainingPair> {
    if frames.is_empty() {
        return Err(Error::Data("clip has no frames".into()));
    }
    let n = frames.len();
    let window = config.window.min(n - 1);
    let i = rng.random_range(0..n);
    let lo = i.saturating_sub(window);
    let hi = (i + window).min(n - 1);
    let j = rng.random_range(lo..=hi);
    let t_target = sample_transform(&config.deform, rng)?;
    let t_deformed = sample_transform(&config.deform, rng)?;
    Ok(TrainingPair {
        target: warp(&frames[i], &t_target),
        deformed: warp(&frames[j], &t_deformed),
        transform: None,
        flipped: false,
        frame_offset: Some(j as i64 - i as i64),
    })
}

use serde::{Deserialize, Serialize};
use tch::Device;

use crate::data::{sample_transform, warp, AugmentRanges, ImageTensor, Point, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::netcore::{detect, images_to_tensor, DetectMode, Detector};
use crate::seed::{stream_rng, tags};

/// Anything that maps images to landmark positions in input pixels.
pub trait LandmarkSource {
    fn landmarks(&self) -> usize;
    fn locate(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<Point>>>;
}

/// A trained detector evaluated in eval mode.
pub struct NetworkSource<'a> {
    pub detector: &'a Detector,
    pub mode: DetectMode,
    pub device: Device,
}

impl LandmarkSource for NetworkSource<'_> {
    fn landmarks(&self) -> usize {
        self.detector.landmarks()
    }

    fn locate(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<Point>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let t = images_to_tensor(chunk, self.device);
            out.extend(detect(self.detector, &t, self.mode)?.to_pixels()?);
        }
        Ok(out)
    }
}

/// Returns the same points for every image (a detector that ignores its input).
pub struct ConstantSource(pub Vec<Point>);

impl LandmarkSource for ConstantSource {
    fn landmarks(&self) -> usize {
        self.0.len()
    }

    fn locate(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<Point>>> {
        Ok(vec![self.0.clone(); images.len()])
    }
}

/// Images per detector call.
pub const EVAL_CHUNK: usize = 32;

/// Per-landmark equivariance residuals, in percent of the image width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// Mean error of landmark `i` at index `i`.
    pub per_point: Vec<f64>,
    /// `(landmark index, error)`, ascending by error.
    pub sorted: Vec<(usize, f64)>,
    pub mean: f64,
    pub images: usize,
    pub trials: usize,
    /// Point observations dropped because a transformed landmark left the frame.
    pub excluded: usize,
}

fn inside(p: Point) -> bool {
    let max = (IMAGE_SIZE - 1) as f64;
    (0.0..=max).contains(&p[0]) && (0.0..=max).contains(&p[1])
}

/// For each image and trial, draws `A` from `ranges` and measures
/// `‖ψᵢ(A(y)) − A(ψᵢ(y))‖` per landmark. Observations where `A(ψᵢ(y))` falls
/// outside the frame are excluded and counted.
pub fn consistency_error(
    source: &dyn LandmarkSource,
    images: &[ImageTensor],
    ranges: &AugmentRanges,
    trials: usize,
    seed: u64,
) -> Result<ConsistencyResult> {
    if images.is_empty() || trials == 0 {
        return Err(Error::Argument("consistency needs at least one image and one trial".into()));
    }
    let k = source.landmarks();
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    let mut excluded = 0;
    for (chunk_idx, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
        let refs: Vec<&ImageTensor> = chunk.iter().collect();
        let base = source.locate(&refs)?;
        for trial in 0..trials {
            let mut transforms = Vec::with_capacity(chunk.len());
            for j in 0..chunk.len() {
                let idx = (chunk_idx * EVAL_CHUNK + j) as u64;
                let mut rng = stream_rng(seed, &[tags::CONSISTENCY, idx, trial as u64]);
                transforms.push(sample_transform(ranges, &mut rng)?);
            }
            let warped: Vec<ImageTensor> =
                chunk.iter().zip(&transforms).map(|(y, a)| warp(y, a)).collect();
            let refs: Vec<&ImageTensor> = warped.iter().collect();
            let found = source.locate(&refs)?;
            for ((pts, a), moved) in base.iter().zip(&transforms).zip(&found) {
                for i in 0..k {
                    let expected = a.apply(pts[i]);
                    if !inside(expected) {
                        excluded += 1;
                        continue;
                    }
                    let d = ((moved[i][0] - expected[0]).powi(2) + (moved[i][1] - expected[1]).powi(2))
                        .sqrt();
                    sums[i] += d * 100.0 / IMAGE_SIZE as f64;
                    counts[i] += 1;
                }
            }
        }
    }
    let per_point: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    if per_point.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("a landmark left the frame under every transform".into()));
    }
    let mut sorted: Vec<(usize, f64)> = per_point.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mean = sorted.iter().map(|s| s.1).sum::<f64>() / k as f64;
    Ok(ConsistencyResult {
        per_point,
        sorted,
        mean,
        images: images.len(),
        trials,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IMAGE_CENTER;

    fn images(n: usize) -> Vec<ImageTensor> {
        (0..n).map(|i| ImageTensor::filled([i as f32 / n as f32, 0.5, 0.5])).collect()
    }

    #[test]
    fn identity_transforms_give_zero() {
        let src = ConstantSource(vec![[10.0, 20.0], [100.0, 50.0]]);
        let r = consistency_error(&src, &images(3), &AugmentRanges::identity(), 5, 0).unwrap();
        assert_eq!(r.per_point, vec![0.0, 0.0]);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn centre_is_fixed_under_rotation() {
        let src = ConstantSource(vec![[IMAGE_CENTER, IMAGE_CENTER]]);
        let ranges = AugmentRanges {
            scale: [1.0, 1.0],
            max_rotation_deg: 90.0,
            max_translation: 0.0,
        };
        let r = consistency_error(&src, &images(4), &ranges, 3, 1).unwrap();
        assert!(r.mean.abs() < 1e-12);
    }

    #[test]
    fn constant_point_under_translation() {
        let src = ConstantSource(vec![[40.0, 40.0]]);
        let ranges = AugmentRanges {
            scale: [1.0, 1.0],
            max_rotation_deg: 0.0,
            max_translation: 6.0,
        };
        let imgs = images(3);
        let r = consistency_error(&src, &imgs, &ranges, 2, 7).unwrap();
        // Replay the transform draws and average ‖t‖ · 100 / 128.
        let mut expect = 0.0;
        for i in 0..3u64 {
            for t in 0..2u64 {
                let mut rng = stream_rng(7, &[tags::CONSISTENCY, i, t]);
                let a = sample_transform(&ranges, &mut rng).unwrap();
                expect += a.translation[0].hypot(a.translation[1]) * 100.0 / 128.0;
            }
        }
        assert!((r.mean - expect / 6.0).abs() < 1e-9);
    }

    #[test]
    fn sorted_list_is_ascending_and_averages_to_mean() {
        let src = ConstantSource(vec![[20.0, 20.0], [64.0, 64.0], [100.0, 30.0]]);
        let r = consistency_error(&src, &images(5), &AugmentRanges::default(), 2, 3).unwrap();
        assert!(r.sorted.windows(2).all(|w| w[0].1 <= w[1].1));
        let m = r.sorted.iter().map(|s| s.1).sum::<f64>() / 3.0;
        assert!((m - r.mean).abs() <= 1e-12);
    }
}

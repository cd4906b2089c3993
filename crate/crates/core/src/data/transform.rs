use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageTensor, Point, CHANNELS, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Pixel-centre coordinate of the image centre; similarity transforms act about it.
pub const IMAGE_CENTER: f64 = (IMAGE_SIZE as f64 - 1.0) / 2.0;

/// Scale, rotation (radians) and translation (pixels) about the image centre:
/// `p ↦ s·R(θ)·(p − c) + c + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub angle: f64,
    pub translation: [f64; 2],
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            angle: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn new(scale: f64, angle: f64, translation: [f64; 2]) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Argument(format!("scale must be positive, got {scale}")));
        }
        if !angle.is_finite() || translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("transform parameters must be finite".into()));
        }
        Ok(Self {
            scale,
            angle,
            translation,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.angle == 0.0 && self.translation == [0.0, 0.0]
    }

    /// The 2×3 affine matrix acting on `(x, y, 1)`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (sin, cos) = self.angle.sin_cos();
        let (a, b) = (self.scale * cos, self.scale * sin);
        let c = IMAGE_CENTER;
        [
            [a, -b, c - a * c + b * c + self.translation[0]],
            [b, a, c - b * c - a * c + self.translation[1]],
        ]
    }

    pub fn apply(&self, p: Point) -> Point {
        if self.is_identity() {
            return p;
        }
        let (sin, cos) = self.angle.sin_cos();
        let dx = p[0] - IMAGE_CENTER;
        let dy = p[1] - IMAGE_CENTER;
        [
            self.scale * (cos * dx - sin * dy) + IMAGE_CENTER + self.translation[0],
            self.scale * (sin * dx + cos * dy) + IMAGE_CENTER + self.translation[1],
        ]
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let (sin, cos) = (-self.angle).sin_cos();
        let [tx, ty] = self.translation;
        Self {
            scale: inv_scale,
            angle: -self.angle,
            translation: [
                -inv_scale * (cos * tx - sin * ty),
                -inv_scale * (sin * tx + cos * ty),
            ],
        }
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &SimilarityTransform) -> Self {
        let (sin, cos) = self.angle.sin_cos();
        let [tx, ty] = inner.translation;
        Self {
            scale: self.scale * inner.scale,
            angle: self.angle + inner.angle,
            translation: [
                self.scale * (cos * tx - sin * ty) + self.translation[0],
                self.scale * (sin * tx + cos * ty) + self.translation[1],
            ],
        }
    }

    /// Conjugate by a horizontal flip: `F ∘ self ∘ F`.
    pub fn mirrored(&self) -> Self {
        Self {
            scale: self.scale,
            angle: -self.angle,
            translation: [-self.translation[0], self.translation[1]],
        }
    }
}

/// Ranges for random similarity transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentRanges {
    /// Inclusive `[lo, hi]` scale range.
    pub scale: [f64; 2],
    /// Rotation is drawn from `[-max_rotation, max_rotation]`, in degrees.
    pub max_rotation_deg: f64,
    /// Each translation component is drawn from `[-max_translation, max_translation]` pixels.
    pub max_translation: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            scale: [0.9, 1.1],
            max_rotation_deg: 15.0,
            max_translation: 0.1 * IMAGE_SIZE as f64,
        }
    }
}

impl AugmentRanges {
    /// Collapsed ranges that only ever produce the identity.
    pub fn identity() -> Self {
        Self {
            scale: [1.0, 1.0],
            max_rotation_deg: 0.0,
            max_translation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("empty or invalid scale range [{lo}, {hi}]")));
        }
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(Error::Config(format!(
                "invalid rotation bound {}",
                self.max_rotation_deg
            )));
        }
        if !(self.max_translation.is_finite() && self.max_translation >= 0.0) {
            return Err(Error::Config(format!(
                "invalid translation bound {}",
                self.max_translation
            )));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws scale, rotation and both translation components uniformly and independently.
pub fn sample_transform(ranges: &AugmentRanges, rng: &mut impl Rng) -> Result<SimilarityTransform> {
    ranges.validate()?;
    let scale = uniform(rng, ranges.scale[0], ranges.scale[1]);
    let rot = ranges.max_rotation_deg.to_radians();
    let angle = uniform(rng, -rot, rot);
    let t = ranges.max_translation;
    let tx = uniform(rng, -t, t);
    let ty = uniform(rng, -t, t);
    SimilarityTransform::new(scale, angle, [tx, ty])
}

/// Resamples `image` so that content at `p` moves to `transform.apply(p)`.
///
/// Bilinear interpolation; samples falling outside the frame replicate the edge.
pub fn warp(image: &ImageTensor, transform: &SimilarityTransform) -> ImageTensor {
    if transform.is_identity() {
        return image.clone();
    }
    let inv = transform.inverse().matrix();
    let max = (IMAGE_SIZE - 1) as f64;
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let src = image.pixels();
    let mut out = vec![0.0f32; ImageTensor::LEN];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (xf, yf) = (x as f64, y as f64);
            let sx = (inv[0][0] * xf + inv[0][1] * yf + inv[0][2]).clamp(0.0, max);
            let sy = (inv[1][0] * xf + inv[1][1] * yf + inv[1][2]).clamp(0.0, max);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(IMAGE_SIZE - 1), (y0 + 1).min(IMAGE_SIZE - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for c in 0..CHANNELS {
                let base = c * plane;
                let p00 = src[base + y0 * IMAGE_SIZE + x0];
                let p01 = src[base + y0 * IMAGE_SIZE + x1];
                let p10 = src[base + y1 * IMAGE_SIZE + x0];
                let p11 = src[base + y1 * IMAGE_SIZE + x1];
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out[base + y * IMAGE_SIZE + x] = (top + (bottom - top) * fy).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(out).expect("bilinear mix of valid pixels stays valid")
}

/// Applies `transform` to each point exactly.
pub fn transform_points(points: &[Point], transform: &SimilarityTransform) -> Vec<Point> {
    points.iter().map(|&p| transform.apply(p)).collect()
}

/// Mirrors points about the vertical centre line, matching [`ImageTensor::flip_horizontal`].
pub fn flip_points(points: &[Point]) -> Vec<Point> {
    points
        .iter()
        .map(|p| [(IMAGE_SIZE - 1) as f64 - p[0], p[1]])
        .collect()
}

/// Loose (randomised) square crop around annotated points, resampled to 128×128.
///
/// The crop side is the points' bounding-box extent times a factor drawn from
/// `margin`, shifted by up to `jitter` of the side. Returns the crop and the
/// points in crop pixel coordinates.
pub fn loose_crop(
    source: &image::RgbImage,
    points: &[Point],
    margin: [f64; 2],
    jitter: f64,
    rng: &mut impl Rng,
) -> Result<(ImageTensor, Vec<Point>)> {
    if points.is_empty() {
        return Err(Error::Data("loose crop needs at least one point".into()));
    }
    if !(margin[0] > 0.0 && margin[0] <= margin[1]) || !(0.0..1.0).contains(&jitter) {
        return Err(Error::Config(format!(
            "invalid crop ranges margin={margin:?} jitter={jitter}"
        )));
    }
    let (w, h) = (source.width() as f64, source.height() as f64);
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let side = extent * uniform(rng, margin[0], margin[1]);
    let cx = (lo[0] + hi[0]) / 2.0 + uniform(rng, -jitter, jitter) * side;
    let cy = (lo[1] + hi[1]) / 2.0 + uniform(rng, -jitter, jitter) * side;
    let step = side / IMAGE_SIZE as f64;
    let (x0, y0) = (cx - side / 2.0, cy - side / 2.0);

    let sample = |c: usize, sx: f64, sy: f64| -> f32 {
        let sx = sx.clamp(0.0, w - 1.0);
        let sy = sy.clamp(0.0, h - 1.0);
        let (ix, iy) = (sx.floor() as u32, sy.floor() as u32);
        let (jx, jy) = ((ix + 1).min(w as u32 - 1), (iy + 1).min(h as u32 - 1));
        let (fx, fy) = ((sx - ix as f64) as f32, (sy - iy as f64) as f32);
        let px = |x: u32, y: u32| f32::from(source.get_pixel(x, y)[c]) / 255.0;
        let top = px(ix, iy) + (px(jx, iy) - px(ix, iy)) * fx;
        let bottom = px(ix, jy) + (px(jx, jy) - px(ix, jy)) * fx;
        top + (bottom - top) * fy
    };
    let image = ImageTensor::from_fn(|c, y, x| {
        // Pixel centres of the crop map to the centre of their source footprint.
        let sx = x0 + (x as f64 + 0.5) * step - 0.5;
        let sy = y0 + (y as f64 + 0.5) * step - 0.5;
        sample(c, sx, sy)
    });
    let mapped = points
        .iter()
        .map(|p| [(p[0] + 0.5 - x0) / step - 0.5, (p[1] + 0.5 - y0) / step - 0.5])
        .collect();
    Ok((image, mapped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use approx::assert_abs_diff_eq;

    fn textured() -> ImageTensor {
        ImageTensor::from_fn(|c, y, x| {
            let (xf, yf) = (x as f32 / 127.0, y as f32 / 127.0);
            match c {
                0 => 0.5 + 0.4 * (6.0 * xf).sin() * (4.0 * yf).cos(),
                1 => 0.5 + 0.3 * (5.0 * (xf + yf)).cos(),
                _ => xf * yf,
            }
        })
    }

    #[test]
    fn matrix_agrees_with_apply() {
        let t = SimilarityTransform::new(1.07, 0.3, [4.0, -2.5]).unwrap();
        let m = t.matrix();
        for p in [[0.0, 0.0], [63.5, 63.5], [100.0, 12.0]] {
            let q = t.apply(p);
            assert_abs_diff_eq!(m[0][0] * p[0] + m[0][1] * p[1] + m[0][2], q[0], epsilon = 1e-9);
            assert_abs_diff_eq!(m[1][0] * p[0] + m[1][1] * p[1] + m[1][2], q[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_and_inverse() {
        let a = SimilarityTransform::new(0.93, -0.2, [3.0, 1.0]).unwrap();
        let b = SimilarityTransform::new(1.05, 0.4, [-6.0, 2.0]).unwrap();
        let p = [17.0, 88.0];
        let ab = a.compose(&b).apply(p);
        let seq = a.apply(b.apply(p));
        assert_abs_diff_eq!(ab[0], seq[0], epsilon = 1e-9);
        assert_abs_diff_eq!(ab[1], seq[1], epsilon = 1e-9);
        let back = a.inverse().apply(a.apply(p));
        assert_abs_diff_eq!(back[0], p[0], epsilon = 1e-9);
        assert_abs_diff_eq!(back[1], p[1], epsilon = 1e-9);
    }

    #[test]
    fn translation_shifts_points_exactly() {
        let t = SimilarityTransform::new(1.0, 0.0, [5.0, -3.0]).unwrap();
        let pts = vec![[0.0, 0.0], [10.25, 99.5]];
        assert_eq!(transform_points(&pts, &t), vec![[5.0, -3.0], [15.25, 96.5]]);
        assert_eq!(transform_points(&pts, &SimilarityTransform::identity()), pts);
    }

    #[test]
    fn mirrored_matches_flip_conjugation() {
        let t = SimilarityTransform::new(1.1, 0.25, [7.0, -4.0]).unwrap();
        let p = [30.0, 70.0];
        let lhs = flip_points(&[t.apply(flip_points(&[p])[0])])[0];
        let rhs = t.mirrored().apply(p);
        assert_abs_diff_eq!(lhs[0], rhs[0], epsilon = 1e-9);
        assert_abs_diff_eq!(lhs[1], rhs[1], epsilon = 1e-9);
    }

    #[test]
    fn collapsed_ranges_give_identity() {
        let mut rng = stream_rng(3, &[]);
        let t = sample_transform(&AugmentRanges::identity(), &mut rng).unwrap();
        assert!(t.is_identity());
    }

    #[test]
    fn empty_range_is_a_config_error() {
        let r = AugmentRanges {
            scale: [1.2, 0.8],
            ..Default::default()
        };
        assert!(matches!(
            sample_transform(&r, &mut stream_rng(0, &[])),
            Err(Error::Config(_))
        ));
        let r = AugmentRanges {
            max_translation: -1.0,
            ..Default::default()
        };
        assert!(sample_transform(&r, &mut stream_rng(0, &[])).is_err());
    }

    #[test]
    fn default_ranges_respected_over_many_draws() {
        let r = AugmentRanges::default();
        let mut rng = stream_rng(11, &[1]);
        let rot = 15f64.to_radians();
        for _ in 0..10_000 {
            let t = sample_transform(&r, &mut rng).unwrap();
            assert!((0.9..=1.1).contains(&t.scale));
            assert!(t.angle.abs() <= rot);
            assert!(t.translation.iter().all(|v| v.abs() <= 12.8));
        }
    }

    #[test]
    fn same_seed_same_transform() {
        let r = AugmentRanges::default();
        let a = sample_transform(&r, &mut stream_rng(5, &[2])).unwrap();
        let b = sample_transform(&r, &mut stream_rng(5, &[2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = textured();
        assert_eq!(warp(&img, &SimilarityTransform::identity()), img);
    }

    #[test]
    fn half_turn_matches_array_rotation() {
        let img = textured();
        let t = SimilarityTransform::new(1.0, std::f64::consts::PI, [0.0, 0.0]).unwrap();
        let out = warp(&img, &t);
        for c in 0..CHANNELS {
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    let expect = img.get(c, IMAGE_SIZE - 1 - y, IMAGE_SIZE - 1 - x);
                    assert!((out.get(c, y, x) - expect).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn warp_then_inverse_recovers_interior() {
        let img = textured();
        let t = SimilarityTransform::new(1.08, 0.2, [5.0, -4.0]).unwrap();
        let back = warp(&warp(&img, &t), &t.inverse());
        let (mut sum, mut n) = (0.0f64, 0usize);
        for c in 0..CHANNELS {
            for y in 24..104 {
                for x in 24..104 {
                    sum += (back.get(c, y, x) - img.get(c, y, x)).abs() as f64;
                    n += 1;
                }
            }
        }
        assert!(sum / (n as f64) < 0.02, "mae {}", sum / n as f64);
    }

    #[test]
    fn loose_crop_tracks_points() {
        let src = image::RgbImage::from_fn(300, 200, |x, y| {
            image::Rgb([(x % 256) as u8, (y % 256) as u8, 128])
        });
        let pts = vec![[120.0, 80.0], [180.0, 130.0]];
        let (crop, mapped) =
            loose_crop(&src, &pts, [1.3, 1.3], 0.0, &mut stream_rng(0, &[])).unwrap();
        for (p, q) in pts.iter().zip(&mapped) {
            let (qx, qy) = (q[0].round() as usize, q[1].round() as usize);
            let red = crop.get(0, qy, qx) * 255.0;
            assert!((red - p[0] as f32).abs() < 2.0, "{red} vs {}", p[0]);
        }
    }
}

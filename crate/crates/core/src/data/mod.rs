//! Image ingestion, similarity-transform pair synthesis, annotations and the
//! synthetic toy corpus.
//!
//! Everything here is plain Rust over `f32` buffers; conversion to framework
//! tensors happens at batching time (see [`crate::training::batch`]).

mod io;
mod pairs;
mod toy;
mod transform;

pub use io::{
    load_clips, load_dataset, parse_annotation_line, read_annotations, write_annotations,
    write_dataset, DatasetManifest, LoadedDataset, ANNOTATION_FILE, MANIFEST_FILE,
};
pub use pairs::{make_pair, PairConfig, PairMode, PairSource, TrainingPair};
pub use toy::{toy_clip, toy_corpus, Family, ToyRender};
pub use transform::{
    flip_points, loose_crop, sample_transform, transform_points, warp, AugmentRanges,
    SimilarityTransform, IMAGE_CENTER,
};

use crate::error::{Error, Result};

/// Side length of every input image.
pub const IMAGE_SIZE: usize = 128;
/// Colour channels per image.
pub const CHANNELS: usize = 3;
/// Side length of the detector's heatmaps.
pub const HEATMAP_SIZE: usize = 32;
/// Input pixels per heatmap cell.
pub const HEATMAP_STRIDE: f64 = (IMAGE_SIZE / HEATMAP_SIZE) as f64;

/// A 2-D point `(x, y)`.
pub type Point = [f64; 2];

/// Heatmap-grid coordinates to input-image pixel coordinates.
///
/// Cell `u` covers pixels `4u..4u+4`, so its centre sits at `4u + 1.5`; this
/// keeps the grid centre (15.5) on the image centre (63.5).
pub fn grid_to_pixel(p: Point) -> Point {
    let offset = (HEATMAP_STRIDE - 1.0) / 2.0;
    [p[0] * HEATMAP_STRIDE + offset, p[1] * HEATMAP_STRIDE + offset]
}

/// Inverse of [`grid_to_pixel`].
pub fn pixel_to_grid(p: Point) -> Point {
    let offset = (HEATMAP_STRIDE - 1.0) / 2.0;
    [(p[0] - offset) / HEATMAP_STRIDE, (p[1] - offset) / HEATMAP_STRIDE]
}

/// A 3×128×128 RGB image, channel-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pixels: Vec<f32>,
}

impl ImageTensor {
    pub const LEN: usize = CHANNELS * IMAGE_SIZE * IMAGE_SIZE;

    pub fn new(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != Self::LEN {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {}",
                pixels.len(),
                Self::LEN
            )));
        }
        if let Some(v) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Data(format!(
                "image value {v} is not a finite number in [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    /// Constant-colour image.
    pub fn filled(rgb: [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(Self::LEN);
        for c in rgb {
            pixels.extend(std::iter::repeat_n(c.clamp(0.0, 1.0), IMAGE_SIZE * IMAGE_SIZE));
        }
        Self { pixels }
    }

    /// Builds an image from `f(channel, y, x)`, clamping into `[0, 1]`.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(Self::LEN);
        for c in 0..CHANNELS {
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    let v = f(c, y, x);
                    pixels.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self { pixels }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x]
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(|c, y, x| self.get(c, y, IMAGE_SIZE - 1 - x))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        if img.width() as usize != IMAGE_SIZE || img.height() as usize != IMAGE_SIZE {
            return Err(Error::Shape(format!(
                "image is {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}",
                img.width(),
                img.height()
            )));
        }
        Ok(Self::from_fn(|c, y, x| {
            f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        }))
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
            let q = |c| (self.get(c, y as usize, x as usize) * 255.0).round() as u8;
            image::Rgb([q(0), q(1), q(2)])
        })
    }
}

/// Dataset partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// An image with `M` annotated points in input-pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSample {
    pub id: String,
    pub split: Split,
    pub image: ImageTensor,
    pub points: Vec<Point>,
}

/// Checks that every sample carries the same, finite, number of points.
pub fn check_annotations(samples: &[AnnotatedSample]) -> Result<usize> {
    let Some(first) = samples.first() else {
        return Err(Error::Data("dataset is empty".into()));
    };
    let m = first.points.len();
    for s in samples {
        if s.points.len() != m {
            return Err(Error::Data(format!(
                "sample {} has {} points, dataset uses {m}",
                s.id,
                s.points.len()
            )));
        }
        if s.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("sample {} has non-finite points", s.id)));
        }
    }
    Ok(m)
}

/// Rejects any sample drawn from the training split.
pub fn require_held_out(samples: &[AnnotatedSample]) -> Result<()> {
    match samples.iter().find(|s| s.split == Split::Train) {
        Some(s) => Err(Error::Data(format!(
            "sample {} belongs to the training split and cannot be used for evaluation",
            s.id
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_pixel_centres_line_up() {
        assert_eq!(grid_to_pixel([15.5, 15.5]), [63.5, 63.5]);
        assert_eq!(grid_to_pixel([0.0, 31.0]), [1.5, 125.5]);
        let p = [12.25, 3.75];
        assert_eq!(pixel_to_grid(grid_to_pixel(p)), p);
    }

    #[test]
    fn image_rejects_bad_buffers() {
        assert!(ImageTensor::new(vec![0.0; 10]).is_err());
        let mut v = vec![0.5; ImageTensor::LEN];
        v[7] = f32::NAN;
        assert!(ImageTensor::new(v.clone()).is_err());
        v[7] = 1.5;
        assert!(ImageTensor::new(v).is_err());
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ImageTensor::from_fn(|c, y, x| ((c * 7 + y * 3 + x) % 11) as f32 / 10.0);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(1, 5, 0), img.get(1, 5, 127));
    }

    #[test]
    fn held_out_check_rejects_train_ids() {
        let s = AnnotatedSample {
            id: "x".into(),
            split: Split::Train,
            image: ImageTensor::filled([0.0; 3]),
            points: vec![],
        };
        assert!(require_held_out(std::slice::from_ref(&s)).is_err());
        let t = AnnotatedSample { split: Split::Test, ..s };
        assert!(require_held_out(&[t]).is_ok());
    }
}

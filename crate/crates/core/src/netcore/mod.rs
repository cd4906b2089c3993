//! The hourglass detector, the softargmax / Gaussian bottleneck and the
//! conditional generator.
//!
//! Landmark coordinates are `(u, v)` = (column, row) in heatmap-grid units;
//! [`crate::data::grid_to_pixel`] converts them to input pixels.

mod detector;
mod generator;

pub use detector::{core_groups, materialize, Detector, DetectorConfig};
pub use generator::{Generator, GeneratorConfig};

use tch::{Device, Kind, Tensor};

use crate::data::{grid_to_pixel, ImageTensor, Point, CHANNELS, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Softargmax temperature.
pub const DEFAULT_BETA: f64 = 10.0;
/// Squared width of rendered Gaussians, in grid units.
pub const DEFAULT_SIGMA2: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapKind {
    /// Unconstrained network output.
    Raw,
    /// Rendered from landmark coordinates.
    Gaussian,
}

/// `(N, K, H, W)` maps.
#[derive(Debug)]
pub struct HeatmapStack {
    pub maps: Tensor,
    kind: HeatmapKind,
    /// `(N, K)` booleans: landmark was outside the grid and clamped (Gaussian kind only).
    clamped: Option<Tensor>,
}

impl HeatmapStack {
    pub fn raw(maps: Tensor) -> Result<Self> {
        if maps.dim() != 4 {
            return Err(Error::Shape(format!(
                "heatmaps must be (N, K, H, W), got {:?}",
                maps.size()
            )));
        }
        Ok(Self {
            maps,
            kind: HeatmapKind::Raw,
            clamped: None,
        })
    }

    pub fn kind(&self) -> HeatmapKind {
        self.kind
    }

    pub fn clamped(&self) -> Option<&Tensor> {
        self.clamped.as_ref()
    }

    /// `(N, K, H, W)`
    pub fn dims(&self) -> [i64; 4] {
        let s = self.maps.size();
        [s[0], s[1], s[2], s[3]]
    }
}

/// `(N, K, 2)` coordinates `(u, v)` in grid units.
#[derive(Debug)]
pub struct LandmarkSet {
    pub points: Tensor,
}

impl LandmarkSet {
    pub fn new(points: Tensor) -> Result<Self> {
        let s = points.size();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::Shape(format!("landmarks must be (N, K, 2), got {s:?}")));
        }
        Ok(Self { points })
    }

    pub fn from_points(points: &[Vec<Point>], device: Device) -> Result<Self> {
        let k = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != k) {
            return Err(Error::Shape("landmark sets differ in size".into()));
        }
        let flat: Vec<f32> = points.iter().flatten().flatten().map(|&v| v as f32).collect();
        Self::new(
            Tensor::from_slice(&flat)
                .reshape([points.len() as i64, k as i64, 2])
                .to_device(device),
        )
    }

    /// Grid-unit coordinates per sample.
    pub fn to_points(&self) -> Result<Vec<Vec<Point>>> {
        let s = self.points.size();
        let flat = Vec::<f64>::try_from(
            self.points
                .detach()
                .to_device(Device::Cpu)
                .to_kind(Kind::Double)
                .reshape([-1]),
        )?;
        Ok(flat
            .chunks(2 * s[1] as usize)
            .map(|row| row.chunks(2).map(|c| [c[0], c[1]]).collect())
            .collect())
    }

    /// Input-pixel coordinates per sample.
    pub fn to_pixels(&self) -> Result<Vec<Vec<Point>>> {
        Ok(self
            .to_points()?
            .into_iter()
            .map(|ps| ps.into_iter().map(grid_to_pixel).collect())
            .collect())
    }
}

/// Per channel, the softmax-weighted expected grid position of `beta · maps`.
pub fn softargmax(maps: &HeatmapStack, beta: f64) -> LandmarkSet {
    let [n, k, h, w] = maps.dims();
    let opts = (maps.maps.kind(), maps.maps.device());
    let p = (maps.maps.reshape([n, k, h * w]) * beta).softmax(-1, maps.maps.kind());
    let cols = Tensor::arange(w, opts).repeat([h]);
    let rows = Tensor::arange(h, opts).repeat_interleave_self_int(w, None, None);
    let u = (&p * cols).sum_dim_intlist(-1, false, None);
    let v = (&p * rows).sum_dim_intlist(-1, false, None);
    LandmarkSet {
        points: Tensor::stack(&[u, v], -1),
    }
}

/// Renders `exp(−‖(u,v) − a_k‖² / σ²)` on an integer `size × size` grid.
/// Landmarks outside the grid are clamped onto it and flagged.
pub fn render_gaussians(landmarks: &LandmarkSet, sigma2: f64, size: usize) -> HeatmapStack {
    let pts = &landmarks.points;
    let s = pts.size();
    let (n, k) = (s[0], s[1]);
    let max = (size - 1) as f64;
    let clamped_pts = pts.clamp(0.0, max);
    let clamped = pts.ne_tensor(&clamped_pts).any_dim(-1, false);
    let opts = (pts.kind(), pts.device());
    let grid = Tensor::arange(size as i64, opts);
    let u = clamped_pts.select(-1, 0).reshape([n, k, 1, 1]);
    let v = clamped_pts.select(-1, 1).reshape([n, k, 1, 1]);
    let dx = (grid.reshape([1, 1, 1, -1]) - u).square();
    let dy = (grid.reshape([1, 1, -1, 1]) - v).square();
    HeatmapStack {
        maps: ((dx + dy) / -sigma2).exp(),
        kind: HeatmapKind::Gaussian,
        clamped: Some(clamped),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectMode {
    /// Integer grid cell of each channel's maximum; ties go to the first cell in row-major order.
    Argmax,
    /// Sub-cell expectation under `softmax(β · maps)`.
    Softargmax,
}

/// Landmarks from heatmaps in either mode.
pub fn landmarks_from_maps(maps: &HeatmapStack, mode: DetectMode, beta: f64) -> LandmarkSet {
    match mode {
        DetectMode::Softargmax => softargmax(maps, beta),
        DetectMode::Argmax => {
            let [n, k, h, w] = maps.dims();
            let idx = maps.maps.reshape([n, k, h * w]).argmax(-1, false);
            let kind = maps.maps.kind();
            let u = idx.remainder(w).to_kind(kind);
            let v = idx.divide_scalar_mode(w, "floor").to_kind(kind);
            LandmarkSet {
                points: Tensor::stack(&[u, v], -1),
            }
        }
    }
}

/// Runs the detector in evaluation mode.
pub fn detect(detector: &Detector, images: &Tensor, mode: DetectMode) -> Result<LandmarkSet> {
    let maps = tch::no_grad(|| detector.forward(images, false))?;
    Ok(landmarks_from_maps(&maps, mode, DEFAULT_BETA))
}

/// Same values and shape, stored channel-innermost. Convolutions keep this
/// layout for their outputs and run considerably faster with it on CPU.
pub fn channels_last(x: &Tensor) -> Tensor {
    x.permute([0, 2, 3, 1]).contiguous().permute([0, 3, 1, 2])
}

/// Stacks images into an `(N, 3, 128, 128)` float tensor on `device`.
pub fn images_to_tensor(images: &[&ImageTensor], device: Device) -> Tensor {
    let mut flat = Vec::with_capacity(images.len() * ImageTensor::LEN);
    for img in images {
        flat.extend_from_slice(img.pixels());
    }
    Tensor::from_slice(&flat)
        .reshape([
            images.len() as i64,
            CHANNELS as i64,
            IMAGE_SIZE as i64,
            IMAGE_SIZE as i64,
        ])
        .to_device(device)
}

/// Converts an `(N, 3, 128, 128)` tensor back to images (values clamped to `[0, 1]`).
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let flat = Vec::<f32>::try_from(
        t.detach()
            .to_device(Device::Cpu)
            .to_kind(Kind::Float)
            .clamp(0.0, 1.0)
            .reshape([-1]),
    )?;
    flat.chunks(ImageTensor::LEN)
        .map(|c| ImageTensor::new(c.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpu() -> (Kind, Device) {
        (Kind::Double, Device::Cpu)
    }

    fn single(map: Tensor) -> HeatmapStack {
        let s = map.size();
        HeatmapStack::raw(map.reshape([1, 1, s[0], s[1]])).unwrap()
    }

    #[test]
    fn uniform_map_gives_grid_centre() {
        let l = softargmax(&single(Tensor::zeros([32, 32], cpu())), 10.0);
        let p = l.to_points().unwrap()[0][0];
        assert!((p[0] - 15.5).abs() < 1e-12 && (p[1] - 15.5).abs() < 1e-12);
    }

    #[test]
    fn spike_is_recovered_within_half_a_cell() {
        let m = Tensor::zeros([32, 32], cpu());
        let _ = m.get(21).get(7).fill_(1.0);
        let p = softargmax(&single(m), 10.0).to_points().unwrap()[0][0];
        assert!(((p[0] - 7.0).powi(2) + (p[1] - 21.0).powi(2)).sqrt() < 0.5, "{p:?}");
    }

    #[test]
    fn mirror_symmetric_map_centres_horizontally() {
        let m = Tensor::rand([32, 16], cpu());
        let full = Tensor::cat(&[m.shallow_clone(), m.flip([1])], 1);
        let p = softargmax(&single(full), 10.0).to_points().unwrap()[0][0];
        assert!((p[0] - 15.5).abs() < 1e-12, "{}", p[0]);
    }

    #[test]
    fn gaussian_values() {
        let l = LandmarkSet::from_points(&[vec![[10.0, 10.0]]], Device::Cpu).unwrap();
        let h = render_gaussians(&l, DEFAULT_SIGMA2, 32);
        assert_eq!(h.maps.double_value(&[0, 0, 10, 10]), 1.0);
        let d1 = h.maps.double_value(&[0, 0, 10, 11]);
        assert!((d1 - (-2.0f64).exp()).abs() < 1e-7);
        assert!(h.maps.max().double_value(&[]) <= 1.0);
    }

    #[test]
    fn off_grid_landmarks_are_clamped_and_flagged() {
        let l = LandmarkSet::from_points(&[vec![[-3.0, 4.0], [5.0, 5.0]]], Device::Cpu).unwrap();
        let h = render_gaussians(&l, DEFAULT_SIGMA2, 32);
        let flags = h.clamped().unwrap();
        assert!(flags.int64_value(&[0, 0]) != 0);
        assert!(flags.int64_value(&[0, 1]) == 0);
        assert_eq!(h.maps.double_value(&[0, 0, 4, 0]), 1.0);
    }

    #[test]
    fn corner_landmark_peaks_in_corner() {
        let l = LandmarkSet::from_points(&[vec![[0.0, 0.0]]], Device::Cpu).unwrap();
        let h = render_gaussians(&l, DEFAULT_SIGMA2, 32);
        let a = landmarks_from_maps(&h, DetectMode::Argmax, 10.0).to_points().unwrap();
        assert_eq!(a[0][0], [0.0, 0.0]);
    }

    #[test]
    fn argmax_recovers_rendered_landmark_and_breaks_ties_row_major() {
        let l = LandmarkSet::from_points(&[vec![[5.0, 9.0]]], Device::Cpu).unwrap();
        let h = render_gaussians(&l, DEFAULT_SIGMA2, 32);
        let a = landmarks_from_maps(&h, DetectMode::Argmax, 10.0).to_points().unwrap();
        assert_eq!(a[0][0], [5.0, 9.0]);

        let m = Tensor::zeros([32, 32], cpu());
        let _ = m.get(12).get(3).fill_(2.0);
        let _ = m.get(4).get(20).fill_(2.0);
        let a = landmarks_from_maps(&single(m), DetectMode::Argmax, 10.0).to_points().unwrap();
        assert_eq!(a[0][0], [20.0, 4.0]);
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = ImageTensor::from_fn(|c, y, x| ((c + 2 * y + 3 * x) % 17) as f32 / 16.0);
        let t = images_to_tensor(&[&img, &img], Device::Cpu);
        assert_eq!(t.size(), [2, 3, 128, 128]);
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back[1], img);
    }
}

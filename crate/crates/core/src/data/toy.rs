//! Synthetic articulated sprites on textured backgrounds.
//!
//! Family `A` is a ten-part stick body (head, torso, two-segment limbs) and
//! family `B` a face-like sprite with five annotated parts (eyes, nose, mouth
//! corners). Annotations are the centres of the parts and are guaranteed to
//! fall on their own part's visible pixels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSample, ImageTensor, Point, Split, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, tags};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

impl Family {
    /// Annotated points per sample.
    pub fn point_count(self) -> usize {
        match self {
            Family::A => 10,
            Family::B => 5,
        }
    }

    /// Indices of the two parts whose distance normalises regression errors
    /// (the "eyes" for `B`, the two shoulders' upper arms for `A`).
    pub fn anchor_indices(self) -> [usize; 2] {
        match self {
            Family::A => [2, 4],
            Family::B => [0, 1],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::B => "B",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Family::A => 0xA,
            Family::B => 0xB,
        }
    }

    fn ranges(self) -> &'static [(f64, f64)] {
        match self {
            Family::A => &BODY_RANGES,
            Family::B => &FACE_RANGES,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Family::A),
            "B" | "b" => Ok(Family::B),
            other => Err(Error::Argument(format!("unknown toy family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Circle { c: Point, r: f64 },
    Ellipse { c: Point, axes: [f64; 2], angle: f64 },
    Capsule { a: Point, b: Point, r: f64 },
}

impl Shape {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Shape::Circle { c, r } => (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r * r,
            Shape::Ellipse { c, axes, angle } => {
                let (s, co) = angle.sin_cos();
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                let u = co * dx + s * dy;
                let v = -s * dx + co * dy;
                (u / axes[0]).powi(2) + (v / axes[1]).powi(2) <= 1.0
            }
            Shape::Capsule { a, b, r } => {
                let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                let len2 = ex * ex + ey * ey;
                let t = if len2 > 0.0 {
                    (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (a[0] + t * ex - p[0], a[1] + t * ey - p[1]);
                qx * qx + qy * qy <= r * r
            }
        }
    }

    fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            Shape::Circle { c, r } => ([c[0] - r, c[1] - r], [c[0] + r, c[1] + r]),
            Shape::Ellipse { c, axes, .. } => {
                let r = axes[0].max(axes[1]);
                ([c[0] - r, c[1] - r], [c[0] + r, c[1] + r])
            }
            Shape::Capsule { a, b, r } => (
                [a[0].min(b[0]) - r, a[1].min(b[1]) - r],
                [a[0].max(b[0]) + r, a[1].max(b[1]) + r],
            ),
        }
    }

    fn center(&self) -> Point {
        match *self {
            Shape::Circle { c, .. } | Shape::Ellipse { c, .. } => c,
            Shape::Capsule { a, b, .. } => [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
        }
    }
}

struct Part {
    shape: Shape,
    color: [f32; 3],
    /// Annotation index, for annotated parts.
    label: Option<usize>,
}

struct Background {
    base: [f32; 3],
    /// (frequency in cycles/image, direction, phase, amplitude, per-channel gain)
    waves: Vec<(f64, f64, f64, f64, [f64; 3])>,
    noise_seed: u64,
}

impl Background {
    fn sample(rng: &mut impl Rng) -> Self {
        let base = [
            rng.random_range(0.3..0.6),
            rng.random_range(0.3..0.6),
            rng.random_range(0.3..0.6),
        ];
        let waves = (0..3)
            .map(|_| {
                (
                    rng.random_range(2.0..8.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.03..0.08),
                    [
                        rng.random_range(0.5..1.0),
                        rng.random_range(0.5..1.0),
                        rng.random_range(0.5..1.0),
                    ],
                )
            })
            .collect();
        Self {
            base,
            waves,
            noise_seed: rng.random(),
        }
    }

    fn value(&self, c: usize, x: usize, y: usize) -> f32 {
        let (xf, yf) = (x as f64 / IMAGE_SIZE as f64, y as f64 / IMAGE_SIZE as f64);
        let mut v = self.base[c] as f64;
        for &(freq, dir, phase, amp, gain) in &self.waves {
            let along = xf * dir.cos() + yf * dir.sin();
            v += amp * gain[c] * (std::f64::consts::TAU * freq * along + phase).sin();
        }
        // Cheap deterministic per-pixel grain.
        let h = (self.noise_seed ^ ((c * IMAGE_SIZE + y) * IMAGE_SIZE + x) as u64)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let grain = ((h >> 40) as f64 / (1u64 << 24) as f64 - 0.5) * 0.05;
        (v + grain) as f32
    }
}

/// One rendered toy image with its per-pixel part labels.
#[derive(Clone, Debug)]
pub struct ToyRender {
    pub image: ImageTensor,
    pub points: Vec<Point>,
    /// Annotation index of the visible part at each pixel (row-major), `-1` elsewhere.
    pub labels: Vec<i16>,
}

impl ToyRender {
    /// True when every annotation lies on its own part's visible pixels, away from the border.
    pub fn annotations_on_parts(&self) -> bool {
        self.points.iter().enumerate().all(|(k, p)| {
            let (x, y) = (p[0].round(), p[1].round());
            let inside = (3.0..=(IMAGE_SIZE - 4) as f64).contains(&x)
                && (3.0..=(IMAGE_SIZE - 4) as f64).contains(&y);
            inside && self.labels[y as usize * IMAGE_SIZE + x as usize] == k as i16
        })
    }
}

fn render(parts: &[Part], background: &Background) -> ToyRender {
    let mut owner = vec![-1i32; IMAGE_SIZE * IMAGE_SIZE];
    for (i, part) in parts.iter().enumerate() {
        let (lo, hi) = part.shape.bbox();
        let x0 = lo[0].floor().max(0.0) as usize;
        let y0 = lo[1].floor().max(0.0) as usize;
        let x1 = (hi[0].ceil().max(0.0) as usize).min(IMAGE_SIZE - 1);
        let y1 = (hi[1].ceil().max(0.0) as usize).min(IMAGE_SIZE - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if part.shape.contains([x as f64, y as f64]) {
                    owner[y * IMAGE_SIZE + x] = i as i32;
                }
            }
        }
    }
    let image = ImageTensor::from_fn(|c, y, x| match owner[y * IMAGE_SIZE + x] {
        -1 => background.value(c, x, y),
        i => parts[i as usize].color[c],
    });
    let labels = owner
        .iter()
        .map(|&o| match o {
            -1 => -1,
            i => parts[i as usize].label.map_or(-1, |l| l as i16),
        })
        .collect();
    let mut points = vec![[0.0; 2]; parts.iter().filter(|p| p.label.is_some()).count()];
    for p in parts {
        if let Some(l) = p.label {
            points[l] = p.shape.center();
        }
    }
    ToyRender {
        image,
        points,
        labels,
    }
}

// Pose parameters: image-frame placement first, then family-specific shape.
const BODY_RANGES: [(f64, f64); 12] = [
    (54.0, 74.0),   // centre x
    (56.0, 70.0),   // centre y
    (-30.0, 30.0),  // rotation (deg)
    (0.75, 1.0),    // scale
    (120.0, 240.0), // left upper arm direction (deg)
    (-70.0, 70.0),  // left elbow bend
    (-60.0, 60.0),  // right upper arm direction
    (-70.0, 70.0),  // right elbow bend
    (95.0, 130.0),  // left thigh direction
    (-35.0, 35.0),  // left knee bend
    (50.0, 85.0),   // right thigh direction
    (-35.0, 35.0),  // right knee bend
];

const FACE_RANGES: [(f64, f64); 13] = [
    (54.0, 74.0),  // centre x
    (54.0, 74.0),  // centre y
    (-25.0, 25.0), // rotation (deg)
    (0.8, 1.05),   // scale
    (26.0, 32.0),  // face half-width
    (33.0, 40.0),  // face half-height
    (10.0, 14.0),  // eye half-spacing
    (-14.0, -8.0), // eye height
    (2.0, 7.0),    // nose height
    (15.0, 21.0),  // mouth height
    (8.0, 13.0),   // mouth half-width
    (-4.0, 4.0),   // yaw-like shift of inner features
    (0.0, 1.0),    // skin tone blend
];

fn jitter(rng: &mut impl Rng, rgb: [f32; 3]) -> [f32; 3] {
    rgb.map(|v| (v + rng.random_range(-0.06f32..0.06)).clamp(0.0, 1.0))
}

struct Frame {
    center: Point,
    rot: f64,
    scale: f64,
}

impl Frame {
    fn map(&self, p: Point) -> Point {
        let (s, c) = self.rot.sin_cos();
        [
            self.center[0] + self.scale * (c * p[0] - s * p[1]),
            self.center[1] + self.scale * (s * p[0] + c * p[1]),
        ]
    }
}

fn dir(deg: f64) -> Point {
    let r = deg.to_radians();
    [r.cos(), r.sin()]
}

fn body_parts(q: &[f64], colors: &[[f32; 3]; 10]) -> Vec<Part> {
    let f = Frame {
        center: [q[0], q[1]],
        rot: q[2].to_radians(),
        scale: q[3],
    };
    let s = q[3];
    let limb = |from: Point, deg: f64, len: f64| -> Point {
        let d = dir(deg);
        [from[0] + d[0] * len, from[1] + d[1] * len]
    };
    let capsule = |a: Point, b: Point, r: f64| Shape::Capsule {
        a: f.map(a),
        b: f.map(b),
        r: r * s,
    };
    let (sh_l, sh_r) = ([-11.0, -14.0], [11.0, -14.0]);
    let (hip_l, hip_r) = ([-7.0, 18.0], [7.0, 18.0]);
    let elbow_l = limb(sh_l, q[4], 17.0);
    let hand_l = limb(elbow_l, q[4] + q[5], 15.0);
    let elbow_r = limb(sh_r, q[6], 17.0);
    let hand_r = limb(elbow_r, q[6] + q[7], 15.0);
    let knee_l = limb(hip_l, q[8], 18.0);
    let foot_l = limb(knee_l, q[8] + q[9], 16.0);
    let knee_r = limb(hip_r, q[10], 18.0);
    let foot_r = limb(knee_r, q[10] + q[11], 16.0);
    let part = |shape, label: usize| Part {
        shape,
        color: colors[label],
        label: Some(label),
    };
    // Paint order: legs, torso, head, arms.
    vec![
        part(capsule(knee_l, foot_l, 4.0), 7),
        part(capsule(knee_r, foot_r, 4.0), 9),
        part(capsule(hip_l, knee_l, 4.5), 6),
        part(capsule(hip_r, knee_r, 4.5), 8),
        part(
            Shape::Ellipse {
                c: f.map([0.0, 0.0]),
                axes: [11.0 * s, 20.0 * s],
                angle: f.rot,
            },
            1,
        ),
        part(
            Shape::Circle {
                c: f.map([0.0, -30.0]),
                r: 8.0 * s,
            },
            0,
        ),
        part(capsule(sh_l, elbow_l, 4.0), 2),
        part(capsule(sh_r, elbow_r, 4.0), 4),
        part(capsule(elbow_l, hand_l, 3.5), 3),
        part(capsule(elbow_r, hand_r, 3.5), 5),
    ]
}

const BODY_COLORS: [[f32; 3]; 10] = [
    [0.95, 0.80, 0.20], // head
    [0.85, 0.15, 0.15], // torso
    [0.10, 0.60, 0.95], // left upper arm
    [0.05, 0.30, 0.70], // left forearm
    [0.20, 0.85, 0.30], // right upper arm
    [0.05, 0.50, 0.15], // right forearm
    [0.95, 0.50, 0.10], // left thigh
    [0.60, 0.25, 0.05], // left shin
    [0.75, 0.30, 0.85], // right thigh
    [0.45, 0.10, 0.55], // right shin
];

fn face_parts(q: &[f64], rng: &mut impl Rng) -> Vec<Part> {
    let f = Frame {
        center: [q[0], q[1]],
        rot: q[2].to_radians(),
        scale: q[3],
    };
    let s = q[3];
    let (fa, fb, eye_dx, eye_y, nose_y, mouth_y, mouth_w, yaw, tone) =
        (q[4], q[5], q[6], q[7], q[8], q[9], q[10], q[11], q[12] as f32);
    let skin = [
        0.95 - 0.2 * tone,
        0.82 - 0.27 * tone,
        0.68 - 0.28 * tone,
    ];
    let ear = skin.map(|v| v * 0.82);
    let circle = |c: Point, r: f64| Shape::Circle { c: f.map(c), r: r * s };
    let plain = |shape, color| Part {
        shape,
        color,
        label: None,
    };
    let marked = |shape, color, label| Part {
        shape,
        color,
        label: Some(label),
    };
    let brow = jitter(rng, [0.30, 0.20, 0.10]);
    vec![
        plain(circle([-fa * 0.95, -6.0], 7.0), ear),
        plain(circle([fa * 0.95, -6.0], 7.0), ear),
        plain(
            Shape::Ellipse {
                c: f.map([0.0, 0.0]),
                axes: [fa * s, fb * s],
                angle: f.rot,
            },
            skin,
        ),
        plain(
            Shape::Capsule {
                a: f.map([yaw - eye_dx - 5.0, eye_y - 7.0]),
                b: f.map([yaw - eye_dx + 4.0, eye_y - 8.0]),
                r: 1.6 * s,
            },
            brow,
        ),
        plain(
            Shape::Capsule {
                a: f.map([yaw + eye_dx - 4.0, eye_y - 8.0]),
                b: f.map([yaw + eye_dx + 5.0, eye_y - 7.0]),
                r: 1.6 * s,
            },
            brow,
        ),
        marked(
            circle([yaw - eye_dx, eye_y], 4.5),
            jitter(rng, [0.15, 0.25, 0.65]),
            0,
        ),
        marked(
            circle([yaw + eye_dx, eye_y], 4.5),
            jitter(rng, [0.15, 0.25, 0.65]),
            1,
        ),
        marked(
            circle([yaw * 1.3, nose_y], 4.0),
            jitter(rng, [0.70, 0.35, 0.25]),
            2,
        ),
        plain(
            Shape::Capsule {
                a: f.map([yaw - mouth_w + 2.0, mouth_y]),
                b: f.map([yaw + mouth_w - 2.0, mouth_y]),
                r: 2.2 * s,
            },
            jitter(rng, [0.55, 0.05, 0.15]),
        ),
        marked(
            circle([yaw - mouth_w, mouth_y], 3.2),
            jitter(rng, [0.95, 0.45, 0.70]),
            3,
        ),
        marked(
            circle([yaw + mouth_w, mouth_y], 3.2),
            jitter(rng, [0.95, 0.45, 0.70]),
            4,
        ),
    ]
}

fn sample_pose(family: Family, rng: &mut impl Rng) -> Vec<f64> {
    family
        .ranges()
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..=hi))
        .collect()
}

fn render_pose(family: Family, pose: &[f64], background: &Background, rng: &mut impl Rng) -> ToyRender {
    let parts = match family {
        Family::A => {
            let mut colors = BODY_COLORS;
            for c in colors.iter_mut() {
                *c = jitter(rng, *c);
            }
            body_parts(pose, &colors)
        }
        Family::B => face_parts(pose, rng),
    };
    render(&parts, background)
}

const MAX_ATTEMPTS: usize = 1000;

/// Renders one sample, redrawing the pose until every annotation sits on its part.
pub(crate) fn render_sample(family: Family, rng: &mut impl Rng) -> Result<ToyRender> {
    let background = Background::sample(rng);
    for _ in 0..MAX_ATTEMPTS {
        let pose = sample_pose(family, rng);
        let out = render_pose(family, &pose, &background, rng);
        if out.annotations_on_parts() {
            return Ok(out);
        }
    }
    Err(Error::Data(format!(
        "could not place a valid family {} sprite in {MAX_ATTEMPTS} attempts",
        family.as_str()
    )))
}

/// Generates `n_images` annotated toy samples of one family for one split.
///
/// Sample `i` depends only on `(seed, family, split, i)`, so train and test sets
/// drawn with the same seed never share images.
pub fn toy_corpus(seed: u64, n_images: usize, family: Family, split: Split) -> Result<Vec<AnnotatedSample>> {
    if n_images == 0 {
        return Err(Error::Argument("toy corpus needs at least one image".into()));
    }
    let split_tag = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    (0..n_images)
        .map(|i| {
            let mut rng = stream_rng(seed, &[tags::TOY, family.tag(), split_tag, i as u64]);
            let r = render_sample(family, &mut rng)?;
            Ok(AnnotatedSample {
                id: format!("{}-{}-{i:05}", family.as_str(), split.as_str()),
                split,
                image: r.image,
                points: r.points,
            })
        })
        .collect()
}

/// A clip of `n_frames` frames whose pose drifts smoothly over a fixed background.
/// Returns the frames and the per-frame annotations.
pub fn toy_clip(seed: u64, n_frames: usize, family: Family) -> Result<(Vec<ImageTensor>, Vec<Vec<Point>>)> {
    if n_frames == 0 {
        return Err(Error::Argument("clip needs at least one frame".into()));
    }
    let mut rng = stream_rng(seed, &[tags::CLIP, family.tag()]);
    let background = Background::sample(&mut rng);
    let ranges = family.ranges();
    let mut start = None;
    for _ in 0..MAX_ATTEMPTS {
        let p = sample_pose(family, &mut rng);
        if render_pose(family, &p, &background, &mut rng).annotations_on_parts() {
            start = Some(p);
            break;
        }
    }
    let mut pose =
        start.ok_or_else(|| Error::Data("could not place a valid clip start pose".into()))?;
    let mut frames = Vec::with_capacity(n_frames);
    let mut points = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut accepted = None;
        for _ in 0..20 {
            let step: Vec<f64> = pose
                .iter()
                .zip(ranges)
                .map(|(&v, &(lo, hi))| {
                    let d = rng.random_range(-0.03..0.03) * (hi - lo);
                    (v + d).clamp(lo, hi)
                })
                .collect();
            let r = render_pose(family, &step, &background, &mut rng);
            if r.annotations_on_parts() {
                accepted = Some((step, r));
                break;
            }
        }
        let r = match accepted {
            Some((step, r)) => {
                pose = step;
                r
            }
            None => render_pose(family, &pose, &background, &mut rng),
        };
        frames.push(r.image);
        points.push(r.points);
    }
    Ok((frames, points))
}

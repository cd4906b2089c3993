use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Point;
use crate::error::{Error, Result};

/// Ridge strength used when the least-squares design is rank deficient.
pub const RIDGE_LAMBDA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Discovered landmarks → annotations.
    Forward,
    /// Annotations → discovered landmarks.
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// How point errors are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    /// Mean Euclidean distance over inter-ocular distance, in percent.
    #[default]
    Nme,
    /// Mean squared distance over squared inter-ocular distance, in percent.
    Squared,
}

/// Affine map between flattened point vectors: `target = [source, 1] · weights`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionModel {
    pub direction: Direction,
    /// `(2S + 1) × 2T`, intercept in the last row.
    pub weights: DMatrix<f64>,
    pub n_im: usize,
    /// The design was rank deficient and the ridge solution was used.
    pub ridge: bool,
}

fn flatten(points: &[Point]) -> impl Iterator<Item = f64> + '_ {
    points.iter().flat_map(|p| [p[0], p[1]])
}

fn design(rows: &[&Vec<Point>]) -> DMatrix<f64> {
    let cols = 2 * rows[0].len() + 1;
    DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flat_map(|r| flatten(r).chain(std::iter::once(1.0))),
    )
}

fn targets(rows: &[&Vec<Point>]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows.len(), 2 * rows[0].len(), rows.iter().flat_map(|r| flatten(r)))
}

fn consistent(sets: &[Vec<Point>], what: &str) -> Result<usize> {
    let m = sets.first().map(Vec::len).unwrap_or(0);
    if m == 0 || sets.iter().any(|s| s.len() != m) {
        return Err(Error::Data(format!("{what} point sets are empty or of unequal size")));
    }
    Ok(m)
}

/// Least-squares affine fit with intercept on the first `n_im` pairs.
pub fn fit_regressor(
    discovered: &[Vec<Point>],
    annotated: &[Vec<Point>],
    n_im: usize,
    direction: Direction,
) -> Result<RegressionModel> {
    if n_im < 1 {
        return Err(Error::Argument("n_im must be at least 1".into()));
    }
    if discovered.len() != annotated.len() {
        return Err(Error::Data(format!(
            "{} discovered and {} annotated point sets",
            discovered.len(),
            annotated.len()
        )));
    }
    if n_im > discovered.len() {
        return Err(Error::Argument(format!(
            "n_im = {n_im} exceeds the {} available training images",
            discovered.len()
        )));
    }
    consistent(discovered, "discovered")?;
    consistent(annotated, "annotated")?;
    let (src, dst) = match direction {
        Direction::Forward => (discovered, annotated),
        Direction::Backward => (annotated, discovered),
    };
    let src: Vec<&Vec<Point>> = src[..n_im].iter().collect();
    let dst: Vec<&Vec<Point>> = dst[..n_im].iter().collect();
    let x = design(&src);
    let y = targets(&dst);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let rank = x.clone().svd(false, false).rank(1e-9 * x.norm().max(1.0));
    let (weights, ridge) = if rank == x.ncols() {
        let w = xtx
            .cholesky()
            .map(|c| c.solve(&xty))
            .or_else(|| x.clone().svd(true, true).solve(&y, 1e-12).ok());
        match w {
            Some(w) => (w, false),
            None => (ridge_solve(&x, &y), true),
        }
    } else {
        (ridge_solve(&x, &y), true)
    };
    Ok(RegressionModel {
        direction,
        weights,
        n_im,
        ridge,
    })
}

fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let a = x.transpose() * x + DMatrix::<f64>::identity(n, n) * RIDGE_LAMBDA;
    let b = x.transpose() * y;
    a.cholesky()
        .expect("ridge-regularised normal matrix is positive definite")
        .solve(&b)
}

impl RegressionModel {
    /// Predicted target points for one source point set.
    pub fn predict(&self, source: &[Point]) -> Result<Vec<Point>> {
        if 2 * source.len() + 1 != self.weights.nrows() {
            return Err(Error::Shape(format!(
                "regressor expects {} source points, got {}",
                (self.weights.nrows() - 1) / 2,
                source.len()
            )));
        }
        let x = DVector::from_iterator(self.weights.nrows(), flatten(source).chain([1.0]));
        let y = self.weights.transpose() * x;
        Ok(y.as_slice().chunks(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// Aggregated regression error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionError {
    pub value: f64,
    pub samples: usize,
    /// Samples dropped because their inter-ocular distance was zero.
    pub excluded: usize,
}

/// Error of `model` on held-out pairs, normalised per sample by `inter_ocular`.
pub fn regression_error(
    model: &RegressionModel,
    discovered: &[Vec<Point>],
    annotated: &[Vec<Point>],
    inter_ocular: &[f64],
    metric: ErrorMetric,
) -> Result<RegressionError> {
    if discovered.len() != annotated.len() || annotated.len() != inter_ocular.len() {
        return Err(Error::Data("test sets have unequal lengths".into()));
    }
    let (src, dst) = match model.direction {
        Direction::Forward => (discovered, annotated),
        Direction::Backward => (annotated, discovered),
    };
    let (mut total, mut count, mut used, mut excluded) = (0.0, 0usize, 0usize, 0usize);
    for ((s, t), &iod) in src.iter().zip(dst).zip(inter_ocular) {
        if iod.is_nan() || iod <= 0.0 {
            excluded += 1;
            continue;
        }
        let pred = model.predict(s)?;
        for (p, q) in pred.iter().zip(t) {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() / iod;
            total += match metric {
                ErrorMetric::Nme => d,
                ErrorMetric::Squared => d * d,
            };
            count += 1;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Data("no test sample has a usable inter-ocular distance".into()));
    }
    Ok(RegressionError {
        value: 100.0 * total / count as f64,
        samples: used,
        excluded,
    })
}

/// Euclidean distance between the two anchor annotations of each sample.
pub fn inter_ocular(annotated: &[Vec<Point>], anchors: [usize; 2]) -> Result<Vec<f64>> {
    annotated
        .iter()
        .map(|pts| {
            let (a, b) = match (pts.get(anchors[0]), pts.get(anchors[1])) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Data(format!(
                        "anchor points {anchors:?} missing from a {}-point annotation",
                        pts.len()
                    )))
                }
            };
            Ok(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        })
        .collect()
}

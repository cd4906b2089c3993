//! Forward and backward linear-regression protocols and the per-point
//! consistency protocol, plus reports and plots.

mod consistency;
mod plot;
mod regression;
mod report;

pub use consistency::{
    consistency_error, ConsistencyResult, ConstantSource, LandmarkSource, NetworkSource, EVAL_CHUNK,
};
pub use plot::{plot_consistency, plot_regression, plot_reports};
pub use regression::{
    fit_regressor, inter_ocular, regression_error, Direction, ErrorMetric, RegressionError,
    RegressionModel, RIDGE_LAMBDA,
};
pub use report::{
    collate, EvalReport, Protocol, ReportCounts, ReportRow, REPORT_FORMAT, REPORT_VERSION,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapters::Regime;
use crate::data::{require_held_out, AnnotatedSample, AugmentRanges, ImageTensor, Point, Split};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, tags};

/// `n_im` values tried by default; the full training set is always appended.
pub const DEFAULT_N_IM: [usize; 7] = [1, 5, 10, 100, 500, 1000, 5000];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Regression sizes; empty means [`DEFAULT_N_IM`]. Values beyond the
    /// training set are dropped and the full set is always included.
    pub n_im: Vec<usize>,
    pub metric: ErrorMetric,
    /// Consistency transforms per image.
    pub trials: usize,
    pub ranges: AugmentRanges,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_im: Vec::new(),
            metric: ErrorMetric::Nme,
            trials: 5,
            ranges: AugmentRanges::default(),
            seed: 0,
        }
    }
}

/// Sorted, de-duplicated sizes no larger than `available`, ending with `available`.
pub fn n_im_grid(requested: &[usize], available: usize) -> Vec<usize> {
    let base: &[usize] = if requested.is_empty() { &DEFAULT_N_IM } else { requested };
    let mut grid: Vec<usize> = base
        .iter()
        .copied()
        .filter(|&n| n >= 1 && n <= available)
        .chain((available > 0).then_some(available))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Annotated images for evaluation: `train` fits regressors, `test` is scored.
pub struct EvalData {
    pub dataset: String,
    pub train: Vec<AnnotatedSample>,
    pub test: Vec<AnnotatedSample>,
    /// Indices of the two annotations whose distance normalises errors.
    pub anchors: [usize; 2],
}

/// Who produced the landmarks being evaluated.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub regime: Option<Regime>,
    pub config_hash: String,
}

fn points(samples: &[AnnotatedSample]) -> Vec<Vec<Point>> {
    samples.iter().map(|s| s.points.clone()).collect()
}

fn images(samples: &[AnnotatedSample]) -> Vec<&ImageTensor> {
    samples.iter().map(|s| &s.image).collect()
}

/// Runs one protocol end to end.
pub fn evaluate(
    source: &dyn LandmarkSource,
    protocol: Protocol,
    data: &EvalData,
    options: &EvalOptions,
    provenance: &Provenance,
) -> Result<EvalReport> {
    require_held_out(&data.test)?;
    if data.test.is_empty() {
        return Err(Error::Data("no held-out images to evaluate on".into()));
    }
    let mut report = EvalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        protocol,
        regime: provenance.regime,
        dataset: data.dataset.clone(),
        seed: options.seed,
        config_hash: provenance.config_hash.clone(),
        normalization: String::new(),
        metric: None,
        rows: Vec::new(),
        mean: None,
        counts: ReportCounts {
            train_samples: data.train.len(),
            test_samples: data.test.len(),
            ..Default::default()
        },
    };
    match protocol {
        Protocol::Consistency => {
            let test: Vec<ImageTensor> = data.test.iter().map(|s| s.image.clone()).collect();
            let r = consistency_error(source, &test, &options.ranges, options.trials, options.seed)?;
            report.normalization = "percent of image width".into();
            report.rows = r
                .sorted
                .iter()
                .map(|&(i, v)| ReportRow {
                    n_im: None,
                    point: Some(i),
                    value: v,
                    ridge: None,
                })
                .collect();
            report.mean = Some(r.mean);
            report.counts.excluded = r.excluded;
            report.counts.trials = Some(r.trials);
        }
        Protocol::Forward | Protocol::Backward => {
            if let Some(s) = data.train.iter().find(|s| s.split != Split::Train) {
                return Err(Error::Data(format!("regressor fitting sample {} is not a training sample", s.id)));
            }
            let direction = if protocol == Protocol::Forward {
                Direction::Forward
            } else {
                Direction::Backward
            };
            let mut order: Vec<&AnnotatedSample> = data.train.iter().collect();
            order.shuffle(&mut stream_rng(options.seed, &[tags::REGRESSION]));
            let train: Vec<AnnotatedSample> = order.into_iter().cloned().collect();
            let disc_train = source.locate(&images(&train))?;
            let disc_test = source.locate(&images(&data.test))?;
            let ann_train = points(&train);
            let ann_test = points(&data.test);
            let iod = inter_ocular(&ann_test, data.anchors)?;
            report.normalization = match options.metric {
                ErrorMetric::Nme => "percent of inter-ocular distance".into(),
                ErrorMetric::Squared => "percent of squared inter-ocular distance".into(),
            };
            report.metric = Some(options.metric);
            for n in n_im_grid(&options.n_im, train.len()) {
                let model = fit_regressor(&disc_train, &ann_train, n, direction)?;
                let err = regression_error(&model, &disc_test, &ann_test, &iod, options.metric)?;
                report.counts.excluded = err.excluded;
                report.rows.push(ReportRow {
                    n_im: Some(n),
                    point: None,
                    value: err.value,
                    ridge: Some(model.ridge),
                });
            }
        }
    }
    Ok(report)
}

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tch::{Device, Tensor};

use super::batch::{pair_batch, supervised_batch, PairPool, Prefetcher};
use super::config::TrainingConfig;
use super::extractor::FeatureExtractor;
use super::losses::{supervised_loss, total_loss};
use super::model::Model;
use super::optim::Adam;
use super::run::{LogRow, LogWriter, RunDir};
use crate::adapters::{load_checkpoint, save_checkpoint, Checkpoint, Regime};
use crate::data::{check_annotations, pixel_to_grid, AnnotatedSample, Point, HEATMAP_SIZE};
use crate::error::{Error, Result};
use crate::netcore::{detect, images_to_tensor, render_gaussians, DetectMode, LandmarkSet};

const PREFETCH_DEPTH: usize = 2;

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub steps: u64,
    /// Loss of the last step (`None` for zero-step runs).
    pub final_loss: Option<f64>,
}

/// Held-out detection error of a supervised core, in input pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub images: usize,
    pub softargmax_px: f64,
    pub argmax_px: f64,
}

fn configure_runtime(config: &TrainingConfig) {
    // Intra-op threads only: the interop pool cannot be resized once any
    // parallel work has run, and eager execution does not use it.
    if config.deterministic {
        tch::set_num_threads(1);
    }
}

/// Supervised heatmap regression of the core detector on annotated images.
/// Writes checkpoints into `run`; when `held_out` is non-empty the detection
/// error on it is written to `reports/pretrain.json` and returned.
pub fn pretrain_core(
    config: &TrainingConfig,
    train: Vec<AnnotatedSample>,
    held_out: &[AnnotatedSample],
    run: &RunDir,
    device: Device,
) -> Result<(TrainOutcome, Option<DetectionReport>)> {
    if config.regime != Regime::Pretrain {
        return Err(Error::Config(format!(
            "pretraining needs the pretrain regime, config says {}",
            config.regime
        )));
    }
    let m = check_annotations(&train)?;
    if m != config.landmarks {
        return Err(Error::Config(format!(
            "config asks for {} landmarks but annotations carry {m}",
            config.landmarks
        )));
    }
    configure_runtime(config);
    let model = Model::build(config, device)?;
    let train = Arc::new(train);
    let (ranges, batch, seed) = (config.pretrain_augment, config.batch_size, config.seed);
    let data = Arc::clone(&train);
    let prefetch = Prefetcher::spawn(
        0,
        config.total_steps(),
        config.iterations_per_epoch as u64,
        PREFETCH_DEPTH,
        move |e, i| supervised_batch(&data, &ranges, batch, seed, e, i),
    );
    let outcome = run_loop(&model, Adam::new(config.learning_rate, config.adam_betas, config.adam_eps), 0, run, prefetch, |model, b| {
        let images = b.tensor(device);
        let target = render_gaussians(&grid_landmarks(&b.points, device)?, config.bottleneck.sigma2, HEATMAP_SIZE);
        let pred = model.detector.forward(&images, true)?;
        let loss = supervised_loss(&pred, &target)?;
        Ok((loss, None))
    })?;
    let report = if held_out.is_empty() {
        None
    } else {
        let r = detection_error(&model, held_out)?;
        let path = run.reports().join("pretrain.json");
        let json = serde_json::to_string_pretty(&r).expect("report serialises");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))?;
        Some(r)
    };
    Ok((outcome, report))
}

fn grid_landmarks(points: &[Vec<Point>], device: Device) -> Result<LandmarkSet> {
    let grid: Vec<Vec<Point>> = points
        .iter()
        .map(|ps| ps.iter().map(|&p| pixel_to_grid(p)).collect())
        .collect();
    LandmarkSet::from_points(&grid, device)
}

/// Mean Euclidean distance between detected and annotated points, in pixels.
pub fn detection_error(model: &Model, samples: &[AnnotatedSample]) -> Result<DetectionReport> {
    let device = model.store.device();
    let mut sums = [0.0f64; 2];
    let mut count = 0usize;
    for chunk in samples.chunks(32) {
        let refs: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let images = images_to_tensor(&refs, device);
        for (slot, mode) in [DetectMode::Softargmax, DetectMode::Argmax].into_iter().enumerate() {
            let found = detect(&model.detector, &images, mode)?.to_pixels()?;
            for (pred, s) in found.iter().zip(chunk) {
                for (p, q) in pred.iter().zip(&s.points) {
                    sums[slot] += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                }
            }
        }
        count += chunk.len() * model.config.landmarks;
    }
    let n = count.max(1) as f64;
    Ok(DetectionReport {
        images: samples.len(),
        softargmax_px: sums[0] / n,
        argmax_px: sums[1] / n,
    })
}

/// Unsupervised training of detector and generator through the bottleneck.
///
/// `core` is required for the finetune and proposed regimes. With `resume`,
/// training continues from the newest checkpoint in `run`.
pub fn adapt(
    config: &TrainingConfig,
    pool: PairPool,
    core: Option<&Checkpoint>,
    run: &RunDir,
    resume: bool,
    device: Device,
) -> Result<TrainOutcome> {
    if config.regime == Regime::Pretrain {
        return Err(Error::Config("adaptation needs scratch, finetune or proposed".into()));
    }
    configure_runtime(config);
    let mut opt = Adam::new(config.learning_rate, config.adam_betas, config.adam_eps);
    let (model, start) = match resume.then(|| run.latest_checkpoint()).transpose()?.flatten() {
        Some((_, path)) => {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.meta.config_hash != config.hash() {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            opt.load_state(&ckpt.aux, device)?;
            (Model::from_checkpoint(&ckpt, device)?, ckpt.meta.step)
        }
        None => (Model::with_core(config, core, device)?, 0),
    };
    let fx = FeatureExtractor::load(&config.extractor, &config.perceptual_layers, device)?;
    let pairs = config.pairs.clone();
    let (batch, seed) = (config.batch_size, config.seed);
    let prefetch = Prefetcher::spawn(
        start,
        config.total_steps(),
        config.iterations_per_epoch as u64,
        PREFETCH_DEPTH,
        move |e, i| pair_batch(&pool, &pairs, batch, seed, e, i),
    );
    let generator = model
        .generator
        .as_ref()
        .expect("adaptation models carry a generator");
    run_loop(&model, opt, start, run, prefetch, |model, b| {
        let (y, y_prime) = b.tensors(device);
        let parts = total_loss(
            &y,
            &y_prime,
            &model.detector,
            generator,
            &fx,
            config.bottleneck,
            config.loss,
            true,
        )?;
        Ok((parts.total, Some((parts.pixel, parts.perceptual))))
    })
}

/// Shared optimisation loop: one Adam step per batch, a log row per step and a
/// checkpoint every `checkpoint_every` epochs and after the last one.
fn run_loop<T: Send + 'static>(
    model: &Model,
    mut opt: Adam,
    start: u64,
    run: &RunDir,
    mut batches: Prefetcher<T>,
    mut step_fn: impl FnMut(&Model, &T) -> Result<(Tensor, Option<(f64, f64)>)>,
) -> Result<TrainOutcome> {
    let config = &model.config;
    let per_epoch = config.iterations_per_epoch as u64;
    let total = config.total_steps();
    let mut log = LogWriter::open(&run.log_path(), (start > 0).then_some(start))?;
    let params = model.store.trainable();
    let mut last = None;
    let mut path = run.checkpoint(start / per_epoch);
    if start == total {
        save(model, &opt, run, total, &mut path)?;
    }
    for step in start..total {
        let epoch = step / per_epoch;
        opt.set_lr(config.learning_rate_at(epoch as usize));
        let b = batches.recv()?;
        model.store.zero_grad();
        let (loss, parts) = step_fn(model, &b)?;
        let value = loss.double_value(&[]);
        if !value.is_finite() {
            return Err(Error::Data(format!("loss became {value} at step {}", step + 1)));
        }
        loss.backward();
        opt.step(&params);
        log.append(&LogRow {
            step: step + 1,
            loss: value,
            pixel: parts.map(|p| p.0),
            perceptual: parts.map(|p| p.1),
            lr: opt.lr(),
        })?;
        last = Some(value);
        if (step + 1) % per_epoch == 0 {
            let done = (step + 1) / per_epoch;
            if done.is_multiple_of(config.checkpoint_every as u64) || step + 1 == total {
                save(model, &opt, run, step + 1, &mut path)?;
            }
            log::info!("{} epoch {done}/{}: loss {value:.5}", config.regime, config.epochs);
        }
    }
    Ok(TrainOutcome {
        checkpoint: path,
        steps: total,
        final_loss: last,
    })
}

fn save(model: &Model, opt: &Adam, run: &RunDir, step: u64, path: &mut PathBuf) -> Result<()> {
    let epoch = step / model.config.iterations_per_epoch as u64;
    *path = run.checkpoint(epoch);
    save_checkpoint(path, &model.store, &model.meta(step, epoch), &opt.state())
}

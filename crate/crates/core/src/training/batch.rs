//! Batch synthesis and a bounded prefetch queue.
//!
//! Every batch is a pure function of `(seed, epoch, iteration)`, so a resumed
//! or repeated run sees exactly the same data no matter how the producer
//! thread is scheduled.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::Rng;
use tch::{Device, Tensor};

use crate::data::{
    make_pair, sample_transform, transform_points, warp, AnnotatedSample, AugmentRanges,
    ImageTensor, PairConfig, PairSource, Point,
};
use crate::error::{Error, Result};
use crate::netcore::images_to_tensor;
use crate::seed::{stream_rng, tags};

/// Unlabelled images to draw pairs from.
#[derive(Clone)]
pub enum PairPool {
    Images(Arc<Vec<ImageTensor>>),
    Clips(Arc<Vec<Vec<ImageTensor>>>),
}

impl PairPool {
    pub fn len(&self) -> usize {
        match self {
            PairPool::Images(v) => v.len(),
            PairPool::Clips(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `y` and `y′` for a batch, still as plain images.
pub struct PairBatch {
    pub targets: Vec<ImageTensor>,
    pub deformed: Vec<ImageTensor>,
}

impl PairBatch {
    pub fn tensors(&self, device: Device) -> (Tensor, Tensor) {
        let t: Vec<&ImageTensor> = self.targets.iter().collect();
        let d: Vec<&ImageTensor> = self.deformed.iter().collect();
        (images_to_tensor(&t, device), images_to_tensor(&d, device))
    }
}

/// Augmented images with their annotations (pixel units) moved along.
pub struct SupervisedBatch {
    pub images: Vec<ImageTensor>,
    pub points: Vec<Vec<Point>>,
}

impl SupervisedBatch {
    pub fn tensor(&self, device: Device) -> Tensor {
        let refs: Vec<&ImageTensor> = self.images.iter().collect();
        images_to_tensor(&refs, device)
    }
}

pub fn pair_batch(
    pool: &PairPool,
    config: &PairConfig,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    iteration: u64,
) -> Result<PairBatch> {
    if pool.is_empty() {
        return Err(Error::Data("no training images".into()));
    }
    let mut rng = stream_rng(seed, &[tags::BATCH, epoch, iteration]);
    let mut targets = Vec::with_capacity(batch_size);
    let mut deformed = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let i = rng.random_range(0..pool.len());
        let source = match pool {
            PairPool::Images(v) => PairSource::Image(&v[i]),
            PairPool::Clips(v) => PairSource::Clip(&v[i]),
        };
        let pair = make_pair(source, config, &mut rng)?;
        targets.push(pair.target);
        deformed.push(pair.deformed);
    }
    Ok(PairBatch { targets, deformed })
}

pub fn supervised_batch(
    samples: &[AnnotatedSample],
    ranges: &AugmentRanges,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    iteration: u64,
) -> Result<SupervisedBatch> {
    if samples.is_empty() {
        return Err(Error::Data("no annotated training images".into()));
    }
    let mut rng = stream_rng(seed, &[tags::BATCH, epoch, iteration]);
    let mut images = Vec::with_capacity(batch_size);
    let mut points = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let s = &samples[rng.random_range(0..samples.len())];
        let t = sample_transform(ranges, &mut rng)?;
        images.push(warp(&s.image, &t));
        points.push(transform_points(&s.points, &t));
    }
    Ok(SupervisedBatch { images, points })
}

/// Produces batches for steps `start..end` on a worker thread, at most
/// `depth` ahead of the consumer.
pub struct Prefetcher<T: Send + 'static> {
    rx: Option<Receiver<Result<T>>>,
    worker: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetcher<T> {
    /// `make(epoch, iteration)` builds one batch; step `s` maps to
    /// `(s / per_epoch, s % per_epoch)`.
    pub fn spawn(
        start: u64,
        end: u64,
        per_epoch: u64,
        depth: usize,
        make: impl Fn(u64, u64) -> Result<T> + Send + 'static,
    ) -> Self {
        let (tx, rx) = sync_channel(depth.max(1));
        let worker = std::thread::spawn(move || {
            for step in start..end {
                let batch = make(step / per_epoch, step % per_epoch);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        Self {
            rx: Some(rx),
            worker: Some(worker),
        }
    }

    pub fn recv(&mut self) -> Result<T> {
        self.rx
            .as_ref()
            .and_then(|rx| rx.recv().ok())
            .unwrap_or_else(|| Err(Error::Data("batch producer stopped early".into())))
    }
}

impl<T: Send + 'static> Drop for Prefetcher<T> {
    fn drop(&mut self) {
        // Closing the channel unblocks a producer waiting on a full queue.
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

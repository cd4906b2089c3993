//! Losses, the optimiser, batching and the four training procedures
//! (supervised core pretraining and scratch / finetune / proposed adaptation).

pub mod batch;
mod config;
mod extractor;
mod losses;
mod loops;
mod model;
mod optim;
mod run;

pub use batch::{PairBatch, PairPool, SupervisedBatch};
pub use config::{config_hash, ArchConfig, TrainingConfig};
pub use extractor::{ExtractorConfig, FeatureExtractor, IMAGENET_MEAN, IMAGENET_STD};
pub use loops::{adapt, detection_error, pretrain_core, DetectionReport, TrainOutcome};
pub use losses::{
    perceptual_loss, pixel_loss, supervised_loss, total_loss, Bottleneck, LossParts, LossWeights,
};
pub use model::Model;
pub use optim::Adam;
pub use run::{read_log, LogRow, LogWriter, RunDir, RunManifest, LOG_HEADER};

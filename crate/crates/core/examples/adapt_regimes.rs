//! Scratch, finetune and proposed adaptation on unlabelled family-B images,
//! all starting from one supervised core.
//!
//! `cargo run --release --example adapt_regimes`

use std::path::Path;
use std::sync::Arc;

use landmark_adapt::adapters::{load_checkpoint, Regime};
use landmark_adapt::data::{toy_corpus, Family, Split};
use landmark_adapt::training::{adapt, pretrain_core, Model, PairPool, RunDir, TrainingConfig};
use tch::Device;

fn short(mut c: TrainingConfig) -> TrainingConfig {
    c.epochs = 1;
    c.iterations_per_epoch = 10;
    c.batch_size = 4;
    c
}

fn main() -> landmark_adapt::Result<()> {
    let root = Path::new("runs-example");
    let core_cfg = short(TrainingConfig::desk(Regime::Pretrain, 10));
    let core_run = RunDir::create(root, Regime::Pretrain)?;
    let (core, _) = pretrain_core(&core_cfg, toy_corpus(0, 64, Family::A, Split::Train)?, &[], &core_run, Device::Cpu)?;
    let core = load_checkpoint(&core.checkpoint)?;

    let images: Vec<_> = toy_corpus(0, 64, Family::B, Split::Train)?.into_iter().map(|s| s.image).collect();
    let pool = PairPool::Images(Arc::new(images));
    for regime in [Regime::Scratch, Regime::Finetune, Regime::Proposed] {
        let config = short(TrainingConfig::desk(regime, 10));
        let budget = Model::build(&config, Device::Cpu)?.parameter_count();
        let run = RunDir::create(root, regime)?;
        let out = adapt(&config, pool.clone(), Some(&core), &run, false, Device::Cpu)?;
        println!(
            "{regime:>9}: {:>9} trainable / {:>9} frozen detector parameters, last loss {:.4}",
            budget.trainable,
            budget.frozen,
            out.final_loss.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

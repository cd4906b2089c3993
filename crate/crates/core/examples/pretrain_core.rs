//! Supervised training of the core detector on toy family A.
//! A short run; the full desk schedule is `landmark-adapt pretrain`.
//!
//! `cargo run --release --example pretrain_core`

use landmark_adapt::adapters::Regime;
use landmark_adapt::data::{toy_corpus, Family, Split};
use landmark_adapt::training::{pretrain_core, RunDir, TrainingConfig};
use tch::Device;

fn main() -> landmark_adapt::Result<()> {
    let train = toy_corpus(0, 256, Family::A, Split::Train)?;
    let test = toy_corpus(0, 32, Family::A, Split::Test)?;
    let mut config = TrainingConfig::desk(Regime::Pretrain, Family::A.point_count());
    config.epochs = 2;
    config.iterations_per_epoch = 20;
    let run = RunDir::create(std::path::Path::new("runs-example"), Regime::Pretrain)?;
    let (outcome, report) = pretrain_core(&config, train, &test, &run, Device::Cpu)?;
    println!("{} steps, last loss {:?}", outcome.steps, outcome.final_loss);
    if let Some(r) = report {
        println!("held-out error: {:.2} px argmax, {:.2} px softargmax", r.argmax_px, r.softargmax_px);
    }
    println!("core checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

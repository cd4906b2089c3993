//! Trainable detector parameters per regime for the reference and desk
//! hourglasses.
//!
//! `cargo run --example parameter_budget`

use landmark_adapt::adapters::{count_parameters, ParamStore, Regime};
use landmark_adapt::netcore::{Detector, DetectorConfig};
use tch::Device;

fn main() -> landmark_adapt::Result<()> {
    for (name, config) in [("reference", DetectorConfig::reference(10)), ("desk", DetectorConfig::desk(10))] {
        let mut store = ParamStore::new(Device::Cpu);
        let inventory = Detector::new(&mut store, config, Regime::Proposed, 0)?.inventory().clone();
        let scratch = count_parameters(&inventory, Regime::Scratch).trainable;
        println!("{name} hourglass ({} convolutions)", inventory.convs.len());
        for regime in [Regime::Scratch, Regime::Finetune, Regime::Proposed] {
            let c = count_parameters(&inventory, regime);
            println!(
                "  {regime:>9}: {:>9} trainable, {:>9} frozen, {:>5.1}% of scratch",
                c.trainable,
                c.frozen,
                100.0 * c.trainable as f64 / scratch as f64
            );
        }
    }
    Ok(())
}

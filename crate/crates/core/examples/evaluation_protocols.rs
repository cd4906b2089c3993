//! Forward and backward regression and per-point consistency, run on an
//! untrained detector and on a detector that ignores its input.
//!
//! `cargo run --release --example evaluation_protocols`

use landmark_adapt::adapters::Regime;
use landmark_adapt::data::{toy_corpus, Family, Split};
use landmark_adapt::eval::{evaluate, ConstantSource, EvalData, EvalOptions, LandmarkSource, NetworkSource, Protocol, Provenance};
use landmark_adapt::netcore::DetectMode;
use landmark_adapt::training::{Model, TrainingConfig};
use tch::Device;

fn main() -> landmark_adapt::Result<()> {
    let data = EvalData {
        dataset: "B".into(),
        train: toy_corpus(0, 100, Family::B, Split::Train)?,
        test: toy_corpus(0, 40, Family::B, Split::Test)?,
        anchors: Family::B.anchor_indices(),
    };
    let options = EvalOptions {
        n_im: vec![1, 10, 100],
        ..Default::default()
    };
    let model = Model::build(&TrainingConfig::desk(Regime::Scratch, 8), Device::Cpu)?;
    let network = NetworkSource {
        detector: &model.detector,
        mode: DetectMode::Softargmax,
        device: Device::Cpu,
    };
    let constant = ConstantSource((0..8).map(|i| [16.0 + 12.0 * i as f64, 64.0]).collect());
    let sources: [(&str, &dyn LandmarkSource); 2] = [("untrained", &network), ("constant", &constant)];
    for (name, source) in sources {
        for protocol in Protocol::ALL {
            let r = evaluate(source, protocol, &data, &options, &Provenance::default())?;
            let values: Vec<String> = r.rows.iter().map(|row| format!("{:.2}", row.value)).collect();
            println!("{name:>9} {protocol:<11} [{}] ({})", values.join(", "), r.normalization);
        }
    }
    Ok(())
}

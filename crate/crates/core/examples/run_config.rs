//! Layered run configuration: preset, TOML file, then `key=value` overrides.
//!
//! `cargo run --example run_config`

use landmark_adapt::adapters::Regime;
use landmark_adapt::config::{parse_assignment, ConfigBuilder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "regime = \"proposed\"\ntrain.epochs = 5\neval.n_im = [1, 10]\n")?;
    let (key, value) = parse_assignment("train.learning_rate=3e-4")?;
    let config = ConfigBuilder::new().file(&file)?.set(&key, value)?.build(Some(Regime::Scratch), 10)?;
    println!(
        "regime {}, {} epochs × {} iterations, lr {}, n_im {:?}",
        config.train.regime, config.train.epochs, config.train.iterations_per_epoch, config.train.learning_rate, config.eval.n_im
    );
    println!("config hash {}", &config.train.hash()[..16]);
    Ok(())
}

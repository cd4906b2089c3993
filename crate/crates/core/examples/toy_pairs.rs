//! Synthetic annotated images and the (y, y′) pairs used for adaptation.
//! Writes PNGs into `toy-pairs/`.
//!
//! `cargo run --example toy_pairs`

use landmark_adapt::data::{make_pair, toy_corpus, Family, PairConfig, PairSource, Split};
use landmark_adapt::seed::stream_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::Path::new("toy-pairs");
    std::fs::create_dir_all(out)?;
    let config = PairConfig::default();
    for family in [Family::A, Family::B] {
        let samples = toy_corpus(0, 3, family, Split::Train)?;
        for (i, s) in samples.iter().enumerate() {
            println!("{} {} points, first at {:?}", s.id, s.points.len(), s.points[0]);
            let pair = make_pair(PairSource::Image(&s.image), &config, &mut stream_rng(0, &[i as u64]))?;
            let t = pair.transform.expect("warp pairs carry their transform");
            println!("  y′ = warp(y), scale {:.3}, angle {:.3}", t.scale, t.angle);
            for (tag, img) in [("y", &pair.target), ("y-prime", &pair.deformed)] {
                let path = out.join(format!("{}-{tag}.png", s.id));
                img.to_rgb8().save(&path)?;
            }
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

//! Heatmaps → softargmax coordinates → rendered Gaussians, the only path
//! from the detector to the generator.
//!
//! `cargo run --example bottleneck`

use landmark_adapt::netcore::{render_gaussians, softargmax, HeatmapStack, LandmarkSet, DEFAULT_BETA, DEFAULT_SIGMA2};
use tch::{Device, Kind, Tensor};

fn main() -> landmark_adapt::Result<()> {
    let truth = [[8.0f32, 20.0], [16.0, 16.0], [24.0, 9.0]];
    let flat: Vec<f32> = truth.iter().flatten().copied().collect();
    let points = LandmarkSet::new(Tensor::from_slice(&flat).reshape([1, 3, 2]))?;

    let rendered = render_gaussians(&points, DEFAULT_SIGMA2, 32);
    println!("rendered {:?} maps, peak {:.3}", rendered.dims(), rendered.maps.max().double_value(&[]));

    // Read the maps back as if they were detector output.
    let back = softargmax(&HeatmapStack::raw(rendered.maps.shallow_clone())?, DEFAULT_BETA);
    for (p, q) in truth.iter().zip(back.to_points()?[0].iter()) {
        println!("({:>4.1}, {:>4.1}) → ({:>6.3}, {:>6.3})", p[0], p[1], q[0], q[1]);
    }

    // Off-grid points render a lower peak, so the flat background weighs more.
    let off = LandmarkSet::new(Tensor::from_slice(&[8.5f32, 20.5]).reshape([1, 1, 2]))?;
    let maps = render_gaussians(&off, DEFAULT_SIGMA2, 32).maps;
    let q = softargmax(&HeatmapStack::raw(maps.to_kind(Kind::Float).to_device(Device::Cpu))?, DEFAULT_BETA);
    println!("(8.5, 20.5) → {:?}", q.to_points()?[0][0]);
    Ok(())
}

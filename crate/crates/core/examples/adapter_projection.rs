//! Re-targeting a frozen kernel through a projection matrix.
//!
//! `cargo run --example adapter_projection`

use landmark_adapt::adapters::{init_adapter, mode1_product, ConvKernel, ProjectionAdapter};
use tch::{Device, Kind, Tensor};

fn main() -> landmark_adapt::Result<()> {
    tch::manual_seed(0);
    let kernel = ConvKernel::new("demo", Tensor::randn([64, 64, 3, 3], (Kind::Float, Device::Cpu)))?;

    // Identity adapters reproduce the core exactly.
    let same = mode1_product(&init_adapter("demo", 64)?, &kernel)?;
    let diff = (&same.weights - &kernel.weights).abs().max().double_value(&[]);
    println!("identity adapter: max |W − K| = {diff}");

    // A learned adapter mixes output filters: every new filter is a linear
    // combination of the frozen ones.
    let w = Tensor::eye(64, (Kind::Float, Device::Cpu)) + Tensor::randn([64, 64], (Kind::Float, Device::Cpu)) * 0.05;
    let adapted = mode1_product(&ProjectionAdapter::new("demo", w, true)?, &kernel)?;
    println!("adapted kernel shape {:?}", adapted.shape());

    let full = kernel.weights.numel();
    println!("trainable: {full} to fine-tune vs {} for the adapter ({:.1}× fewer)", 64 * 64, full as f64 / 4096.0);
    Ok(())
}

//! LeNet-5 on an MNIST IDX directory.
//!
//! `cargo run --release --example mnist_lenet -- [dir] [mechanism] [sigma] [lr]`
//! defaults to `data/mnist-5k`, GReDP, sigma for epsilon 1, learning rate 1.

use gredp::harness::experiment::{run_experiment, DataSource, ExperimentConfig};
use gredp::training::NoiseGranularity;

fn main() -> gredp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig {
        id: "mnist-lenet".into(),
        data: DataSource::Mnist(args.first().map_or("data/mnist-5k", String::as_str).into()),
        granularity: NoiseGranularity::PerBatch,
        lr: 1.0,
        ..ExperimentConfig::default()
    };
    if let Some(m) = args.get(1) {
        cfg.set("mechanism", m)?;
    }
    if let Some(s) = args.get(2) {
        cfg.set("sigma", s)?;
    }
    if let Some(lr) = args.get(3) {
        cfg.set("lr", lr)?;
    }
    for r in run_experiment(&cfg)? {
        println!("epoch {} {} {:.4}", r.epoch, r.metric, r.value);
    }
    Ok(())
}

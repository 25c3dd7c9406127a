//! Mechanism x epsilon x clip grid on synthetic data, written to CSV.

use gredp::harness::experiment::{run_sweep, DataSource, ExperimentConfig};

fn main() -> gredp::Result<()> {
    let out = std::env::temp_dir().join("gredp_sweep.csv");
    let cfg = ExperimentConfig {
        id: "sweep".into(),
        data: DataSource::Synthetic { dim: 16, classes: 4, count: 400 },
        batch: 40,
        lr: 0.5,
        epochs: 3,
        epsilons: vec![1.0, 4.0],
        out: Some(out.clone()),
        ..ExperimentConfig::default()
    };
    let rows = run_sweep(&cfg)?;
    for r in rows.iter().filter(|r| r.metric == "val_acc" && r.epoch == cfg.epochs) {
        println!("{:<36} acc {:.3}", r.experiment_id, r.value);
    }
    println!("wrote {}", out.display());
    Ok(())
}

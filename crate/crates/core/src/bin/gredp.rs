use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gredp::harness::data::{gen_synthetic, write_mnist_idx, SyntheticSpec};
use gredp::harness::experiment::{run_experiment, run_sweep, ExperimentConfig, ResultRow};
use gredp::harness::verify::verify_theorems;
use gredp::layers::Tensor;
use gredp::training::Dataset;

#[derive(Parser)]
#[command(name = "gredp", version, about = "Differentially private training with spectral gradient perturbation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration for `--trials` seeds.
    Train(RunArgs),
    /// Train every mechanism x epsilon x clip cell of the config.
    Sweep(RunArgs),
    /// Monte-Carlo variance checks, one report line each.
    Verify {
        #[arg(long, default_value_t = 1_000_000)]
        trials: usize,
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset as an MNIST-style IDX directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 28)]
        side: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist:<dir> or synthetic:<dim>x<classes>x<count>
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// dpsgd, gredp, spectral-dp or spectral-dp:<rho>
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["per-sample", "per-batch"])]
    noise_granularity: Option<String>,
}

impl RunArgs {
    fn config(&self) -> gredp::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let overrides: [(&str, Option<String>); 14] = [
            ("data", self.data.clone()),
            ("model", self.model.clone()),
            ("mechanism", self.mechanism.clone()),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("delta", self.delta.map(|v| v.to_string())),
            ("clip", self.clip.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("noise_granularity", self.noise_granularity.clone()),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        // A flag pins that axis of a sweep to the one value.
        if let Some(e) = self.epsilon {
            cfg.epsilons = vec![e];
        }
        if let Some(c) = self.clip {
            cfg.clips = vec![c];
        }
        if let Some(m) = &self.mechanism {
            cfg.set("mechanisms", m)?;
        }
        Ok(cfg)
    }
}

fn summarize(rows: &[ResultRow]) {
    for r in rows.iter().filter(|r| r.metric == "val_acc") {
        println!(
            "{} seed={} epoch={} epsilon={:.4} val_acc={:.4}",
            r.experiment_id, r.seed, r.epoch, r.epsilon, r.value
        );
    }
}

/// Blob classes rendered as images: class `k` lights up one horizontal band.
fn image_dataset(side: usize, classes: usize, count: usize, seed: u64) -> gredp::Result<Dataset> {
    let blobs = gen_synthetic(SyntheticSpec { dim: classes, classes, count, seed })?;
    let band = (side / classes).max(1);
    let samples = blobs
        .samples()
        .iter()
        .map(|s| {
            let mut img = vec![0.0; side * side];
            for (k, &v) in s.data.iter().enumerate() {
                let level = (v / 5.5).clamp(0.0, 1.0);
                for r in (k * band).min(side)..((k + 1) * band).min(side) {
                    img[r * side..(r + 1) * side].fill(level);
                }
            }
            Tensor::from_vec(1, side, side, img)
        })
        .collect::<gredp::Result<Vec<_>>>()?;
    Dataset::new(samples, blobs.labels().to_vec(), classes)
}

fn run(cli: Cli) -> gredp::Result<bool> {
    match cli.command {
        Command::Train(args) => summarize(&run_experiment(&args.config()?)?),
        Command::Sweep(args) => summarize(&run_sweep(&args.config()?)?),
        Command::Verify { trials, tolerance, seed } => {
            let report = verify_theorems(trials, tolerance, seed)?;
            print!("{report}");
            return Ok(report.all_pass());
        }
        Command::GenData { out, side, classes, count, seed } => {
            std::fs::create_dir_all(&out)?;
            let train = image_dataset(side, classes, count, seed)?;
            let test = image_dataset(side, classes, (count / 4).max(classes), seed.wrapping_add(1))?;
            write_mnist_idx(&train, out.join("train-images-idx3-ubyte.gz"), out.join("train-labels-idx1-ubyte.gz"))?;
            write_mnist_idx(&test, out.join("t10k-images-idx3-ubyte.gz"), out.join("t10k-labels-idx1-ubyte.gz"))?;
            println!("wrote {} train and {} test images to {}", train.len(), test.len(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

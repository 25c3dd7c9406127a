//! Experiment configuration, multi-seed training runs and CSV result logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::accountant::calibrate_sigma;
use crate::error::{Error, Result};
use crate::harness::data::{gen_synthetic, load_mnist_idx, SyntheticSpec};
use crate::mechanisms::{MechanismKind, NoiseSpec, Split};
use crate::model::{ModelSpec, ModelState, Preset};
use crate::training::{train_with, Dataset, EpochMetrics, NoiseGranularity, TrainingConfig};

/// Where the training and evaluation sets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Directory holding the four standard MNIST IDX files, gzipped or not.
    Mnist(PathBuf),
    /// Gaussian blobs; the test set is a fresh draw of a quarter the size.
    Synthetic { dim: usize, classes: usize, count: usize },
}

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    [dir.join(stem), dir.join(format!("{stem}.gz"))]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Config(format!("{} has no {stem}[.gz]", dir.display())))
}

impl DataSource {
    /// Returns `(train, test)`. Synthetic data is drawn from `seed` and
    /// `seed + 1`.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Mnist(dir) => {
                let p = MNIST_FILES.map(|s| find_idx(dir, s));
                let [ti, tl, vi, vl] = p;
                Ok((load_mnist_idx(ti?, tl?)?, load_mnist_idx(vi?, vl?)?))
            }
            &DataSource::Synthetic { dim, classes, count } => {
                let train = gen_synthetic(SyntheticSpec { dim, classes, count, seed })?;
                let test = gen_synthetic(SyntheticSpec {
                    dim,
                    classes,
                    count: (count / 4).max(classes),
                    seed: seed.wrapping_add(1),
                })?;
                Ok((train, test))
            }
        }
    }

    fn default_model(&self) -> Preset {
        match self {
            DataSource::Mnist(_) => Preset::LeNet5,
            DataSource::Synthetic { .. } => Preset::MlpCirculant,
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    /// `mnist:<dir>` or `synthetic:<dim>x<classes>x<count>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(dir) = s.strip_prefix("mnist:") {
            return Ok(DataSource::Mnist(PathBuf::from(dir)));
        }
        if let Some(shape) = s.strip_prefix("synthetic:") {
            let parts: Vec<usize> = shape
                .split('x')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad synthetic shape {shape:?}: {e}")))?;
            if let [dim, classes, count] = parts[..] {
                return Ok(DataSource::Synthetic { dim, classes, count });
            }
            return Err(Error::Config(format!("synthetic shape needs dim x classes x count, got {shape:?}")));
        }
        Err(Error::Config(format!("data source must be mnist:<dir> or synthetic:<d>x<k>x<n>, got {s:?}")))
    }
}

/// Everything needed to reproduce an experiment or a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    /// `None` picks LeNet-5 for MNIST and the circulant MLP for synthetic data.
    pub model: Option<Preset>,
    pub data: DataSource,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    /// Explicit noise multiplier; otherwise calibrated from epsilon and delta.
    pub sigma: Option<f64>,
    pub split: Split,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub trials: usize,
    pub granularity: NoiseGranularity,
    pub out: Option<PathBuf>,
    pub mechanisms: Vec<MechanismKind>,
    pub epsilons: Vec<f64>,
    pub clips: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            id: "experiment".into(),
            model: None,
            data: DataSource::Mnist(PathBuf::from("data/mnist-5k")),
            mechanism: MechanismKind::Gredp,
            epsilon: 1.0,
            delta: 1e-5,
            clip: 1.0,
            sigma: None,
            split: Split::balanced(),
            batch: 500,
            lr: 0.01,
            epochs: 5,
            seed: 0,
            trials: 1,
            granularity: NoiseGranularity::PerSample,
            out: None,
            mechanisms: vec![MechanismKind::Gredp, MechanismKind::SpectralDp { rho: 0.5 }, MechanismKind::Dpsgd],
            epsilons: vec![0.5, 1.0, 1.5, 2.0],
            clips: vec![0.1, 1.0],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let v: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::Config(format!("{key} needs at least one value")));
    }
    Ok(v)
}

impl ExperimentConfig {
    /// Reads `key = value` lines. `#` starts a comment; keys accept `-` or `_`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(cfg)
    }

    /// Applies one setting, as from a config line or a CLI flag.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "id" => self.id = v.to_string(),
            "model" => self.model = Some(parse(&key, v)?),
            "data" => self.data = v.parse()?,
            "mechanism" => self.mechanism = parse(&key, v)?,
            "epsilon" => self.epsilon = parse(&key, v)?,
            "delta" => self.delta = parse(&key, v)?,
            "clip" => self.clip = parse(&key, v)?,
            "sigma" => self.sigma = Some(parse(&key, v)?),
            "split" => {
                let [a, b] = parse_list::<f64>(&key, v)?[..] else {
                    return Err(Error::Config(format!("split needs a,b, got {v:?}")));
                };
                self.split = Split::new(a, b).map_err(|e| Error::Config(e.to_string()))?;
            }
            "batch" => self.batch = parse(&key, v)?,
            "lr" => self.lr = parse(&key, v)?,
            "epochs" => self.epochs = parse(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "trials" => self.trials = parse(&key, v)?,
            "noise_granularity" => self.granularity = parse(&key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "mechanisms" => self.mechanisms = parse_list(&key, v)?,
            "epsilons" => self.epsilons = parse_list(&key, v)?,
            "clips" => self.clips = parse_list(&key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Noise multiplier actually used.
    pub fn resolved_sigma(&self) -> Result<f64> {
        match self.sigma {
            Some(s) => Ok(s),
            None => calibrate_sigma(self.epsilon, self.delta),
        }
    }

    pub fn model_preset(&self) -> Preset {
        self.model.unwrap_or_else(|| self.data.default_model())
    }

    /// Training configuration of trial `t`, whose seed is `seed + t`.
    pub fn training_config(&self, trial: usize) -> Result<TrainingConfig> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least one".into()));
        }
        let noise = NoiseSpec::with_split(self.clip, self.resolved_sigma()?, self.split)?;
        let mut cfg = TrainingConfig::new(noise, self.mechanism);
        cfg.batch_size = self.batch;
        cfg.epochs = self.epochs;
        cfg.learning_rate = self.lr;
        cfg.granularity = self.granularity;
        cfg.seed = self.seed.wrapping_add(trial as u64);
        cfg.delta = self.delta;
        Ok(cfg)
    }

    /// One configuration per sweep cell, mechanism-major. Sigma is
    /// recalibrated for each epsilon.
    pub fn sweep_cells(&self) -> Vec<ExperimentConfig> {
        let mut cells = Vec::new();
        for &m in &self.mechanisms {
            for &e in &self.epsilons {
                for &c in &self.clips {
                    let mut cell = self.clone();
                    cell.id = format!("{}/{}/eps{e}/clip{c}", self.id, m.label());
                    cell.mechanism = m;
                    cell.epsilon = e;
                    cell.clip = c;
                    cell.sigma = None;
                    cells.push(cell);
                }
            }
        }
        cells
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub seed: u64,
    pub mechanism: String,
    /// Epsilon spent at this row's step.
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    pub sigma: f64,
    pub batch: usize,
    pub lr: f64,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

pub const CSV_HEADER: [&str; 12] = [
    "experiment_id",
    "seed",
    "mechanism",
    "epsilon",
    "delta",
    "clip",
    "sigma",
    "batch",
    "lr",
    "epoch",
    "metric",
    "value",
];

impl ResultRow {
    fn from_epoch(id: &str, cfg: &TrainingConfig, m: &EpochMetrics) -> [Self; 2] {
        let row = |metric: &str, value: f64| ResultRow {
            experiment_id: id.to_string(),
            seed: cfg.seed,
            mechanism: cfg.mechanism.label(),
            epsilon: m.epsilon_spent,
            delta: cfg.delta,
            clip: cfg.noise.clip(),
            sigma: cfg.noise.sigma(),
            batch: cfg.batch_size,
            lr: cfg.learning_rate,
            epoch: m.epoch,
            metric: metric.to_string(),
            value,
        };
        [row("train_loss", m.train_loss), row("val_acc", m.val_acc)]
    }
}

/// CSV writer that flushes after every epoch, so a crashed run leaves every
/// completed epoch on disk. The first line is a `# created_unix=<secs>`
/// comment; everything after it is deterministic.
pub struct ResultSink {
    writer: Option<csv::Writer<Box<dyn Write>>>,
    rows: Vec<ResultRow>,
}

impl ResultSink {
    /// Collects rows in memory only.
    pub fn memory() -> Self {
        Self { writer: None, rows: Vec::new() }
    }

    pub fn to_writer(mut out: Box<dyn Write>) -> Result<Self> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        writeln!(out, "# created_unix={secs}")?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_HEADER)?;
        w.flush()?;
        Ok(Self { writer: Some(w), rows: Vec::new() })
    }

    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Self::to_writer(Box::new(BufWriter::new(File::create(path)?)))
    }

    pub fn push(&mut self, rows: &[ResultRow]) -> Result<()> {
        if let Some(w) = &mut self.writer {
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        self.rows.extend_from_slice(rows);
        Ok(())
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<ResultRow> {
        self.rows
    }
}

/// Trains `cfg.trials` fresh models on `train`, evaluating on `test` after
/// every epoch and streaming two rows per epoch into `sink`.
pub fn run_trials(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, sink: &mut ResultSink) -> Result<()> {
    let input = train.input_shape().ok_or(Error::Empty("training set"))?;
    let spec = ModelSpec::preset(cfg.model_preset(), input, train.classes())?;
    for t in 0..cfg.trials {
        let tc = cfg.training_config(t)?;
        let model = ModelState::init(spec.clone(), &mut tc.init_rng())?;
        train_with(model, train, test, &tc, |m| sink.push(&ResultRow::from_epoch(&cfg.id, &tc, m)))?;
    }
    Ok(())
}

fn open_sink(cfg: &ExperimentConfig) -> Result<ResultSink> {
    match &cfg.out {
        Some(p) => ResultSink::create(p),
        None => Ok(ResultSink::memory()),
    }
}

/// Loads the data, runs every trial and writes `cfg.out` if set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let (train, test) = cfg.data.load(cfg.seed)?;
    let mut sink = open_sink(cfg)?;
    run_trials(cfg, &train, &test, &mut sink)?;
    Ok(sink.into_rows())
}

/// Every cell of the mechanism x epsilon x clip grid into one CSV.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let (train, test) = cfg.data.load(cfg.seed)?;
    let mut sink = open_sink(cfg)?;
    for cell in cfg.sweep_cells() {
        run_trials(&cell, &train, &test, &mut sink)?;
    }
    Ok(sink.into_rows())
}

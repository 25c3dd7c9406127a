//! Private SGD: per-sample gradients, per-layer clipping and noise, one
//! inverse transform on the batch sum, then a plain parameter update.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;

use crate::accountant::{default_alpha_grid, spent_epsilon};
use crate::error::{invalid, shape, Error, Result};
use crate::layers::Tensor;
use crate::mechanisms::{add_complex_noise, add_real_noise, clip_in_place, lowpass_mask, MechanismKind, NoiseRng, NoiseSpec, RngState};
use crate::model::{argmax, GradDomain, ModelState, WeightGrad};

/// Where the Gaussian noise enters a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NoiseGranularity {
    /// An independent draw on every clipped per-sample gradient.
    #[default]
    PerSample,
    /// One draw on the sum of the clipped per-sample gradients.
    PerBatch,
}

impl NoiseGranularity {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseGranularity::PerSample => "per-sample",
            NoiseGranularity::PerBatch => "per-batch",
        }
    }
}

impl fmt::Display for NoiseGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NoiseGranularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-sample" | "per_sample" | "sample" => Ok(NoiseGranularity::PerSample),
            "per-batch" | "per_batch" | "batch" => Ok(NoiseGranularity::PerBatch),
            _ => Err(invalid(format!("unknown noise granularity `{s}`"))),
        }
    }
}

/// Labelled samples sharing one input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Tensor>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(shape("dataset labels", samples.len(), labels.len()));
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.shape() != first.shape()) {
                return Err(shape("dataset sample", format!("{:?}", first.shape()), format!("{:?}", bad.shape())));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { samples, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input_shape(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(Tensor::shape)
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Fraction of `data` the model classifies correctly.
pub fn accuracy(model: &ModelState, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for (x, &y) in data.samples.iter().zip(&data.labels) {
        if argmax(&model.forward(x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Hyperparameters of one private training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub noise: NoiseSpec,
    pub mechanism: MechanismKind,
    pub granularity: NoiseGranularity,
    pub seed: u64,
    /// Target delta reported alongside the spent epsilon.
    pub delta: f64,
}

impl TrainingConfig {
    /// Batch 500, learning rate 0.01, one epoch, per-sample noise, seed 0,
    /// delta 1e-5.
    pub fn new(noise: NoiseSpec, mechanism: MechanismKind) -> Self {
        Self {
            batch_size: 500,
            epochs: 1,
            learning_rate: 0.01,
            noise,
            mechanism,
            granularity: NoiseGranularity::PerSample,
            seed: 0,
            delta: 1e-5,
        }
    }

    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        if dataset_size == 0 {
            return Err(Error::Empty("training set"));
        }
        if self.batch_size == 0 || self.batch_size > dataset_size {
            return Err(invalid(format!(
                "batch size must lie in 1..={dataset_size}, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_size: usize) -> usize {
        dataset_size / self.batch_size.max(1)
    }

    /// Epsilon spent after `steps` updates under this configuration.
    pub fn spent_epsilon(&self, steps: u64) -> Result<f64> {
        spent_epsilon(self.noise.sigma(), steps, self.delta, &default_alpha_grid())
    }

    fn streams(&self) -> (RngState, RngState, RngState) {
        let base = RngState::new(self.seed);
        (base.derive(1), base.derive(2), base.derive(3))
    }

    /// Generator used for [`ModelState::init`] by [`train`] callers that want
    /// the initialization tied to the training seed.
    pub fn init_rng(&self) -> NoiseRng {
        self.streams().0.rng()
    }
}

/// Samples drawn for one step.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub indices: Vec<usize>,
    pub inputs: Vec<&'a Tensor>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn from_indices(data: &'a Dataset, indices: Vec<usize>) -> Self {
        let inputs = indices.iter().map(|&i| &data.samples[i]).collect();
        let labels = indices.iter().map(|&i| data.labels[i]).collect();
        Self { indices, inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `b` distinct samples chosen uniformly, in shuffled order.
pub fn sample_batch<'a>(data: &'a Dataset, b: usize, rng: &mut NoiseRng) -> Result<Batch<'a>> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if b == 0 || b > data.len() {
        return Err(invalid(format!("batch size must lie in 1..={}, got {b}", data.len())));
    }
    let order = EpochSchedule::new(data.len(), rng);
    Ok(Batch::from_indices(data, order.order[..b].to_vec()))
}

/// A fresh permutation per epoch, cut into consecutive batches.
#[derive(Debug, Clone)]
pub struct EpochSchedule {
    order: Vec<usize>,
}

impl EpochSchedule {
    pub fn new(n: usize, rng: &mut NoiseRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng.inner_mut());
        Self { order }
    }

    /// The `k`-th batch of size `b`; trailing samples that do not fill a
    /// batch are skipped this epoch.
    pub fn batch(&self, k: usize, b: usize) -> &[usize] {
        &self.order[k * b..(k + 1) * b]
    }
}

/// What one [`dp_step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// Mean loss over the batch, before the update.
    pub loss: f64,
    /// Noise injections into each trainable layer's weight gradient.
    pub weight_noise_draws: Vec<usize>,
    /// Noise injections into each trainable layer's bias gradient.
    pub bias_noise_draws: Vec<usize>,
}

enum Acc {
    Spectral(Vec<Complex64>),
    Time(Vec<f64>),
}

/// Clipped, noised and summed gradients of a batch, back in the time domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradients {
    /// `(weights, bias)` per trainable layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub stats: StepStats,
}

/// Per-sample gradients, per-layer clipping to `c`, noise, batch sum,
/// Spectral-DP masking, inverse transform and real part.
///
/// Spectral mechanisms clip the concatenated weight spectrum of each layer;
/// DPSGD clips the time-domain weights. Biases are always clipped and noised
/// in the time domain.
pub fn noisy_gradient_sum(model: &ModelState, batch: &Batch<'_>, cfg: &TrainingConfig, state: RngState) -> Result<NoisyGradients> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let spectral = cfg.mechanism.is_spectral();
    let domain = if spectral { GradDomain::Spectral } else { GradDomain::Time };
    let per_sample = cfg.granularity == NoiseGranularity::PerSample;
    let c = cfg.noise.clip();
    let layers: Vec<_> = model.trainable().collect();
    let mut weight_draws = vec![0usize; layers.len()];
    let mut bias_draws = vec![0usize; layers.len()];
    let mut acc: Vec<(Acc, Vec<f64>)> = Vec::with_capacity(layers.len());
    let mut total_loss = 0.0;

    for (i, (x, &y)) in batch.inputs.iter().zip(&batch.labels).enumerate() {
        let g = model.backward(x, y, domain)?;
        if !g.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: model.step(),
                loss: g.loss,
            });
        }
        total_loss += g.loss;
        let mut rng = state.derive(i as u64 + 1).rng();
        for (l, lg) in g.layers.into_iter().enumerate() {
            let mut bias = lg.bias;
            clip_in_place(&mut bias, c);
            let weight = match lg.weight {
                WeightGrad::Spectral(mut s) => {
                    clip_in_place(&mut s, c);
                    if per_sample {
                        add_complex_noise(&mut s, &cfg.noise, &mut rng);
                    }
                    Acc::Spectral(s)
                }
                WeightGrad::Time(mut t) => {
                    clip_in_place(&mut t, c);
                    if per_sample {
                        add_real_noise(&mut t, &cfg.noise, &mut rng);
                    }
                    Acc::Time(t)
                }
            };
            if per_sample {
                add_real_noise(&mut bias, &cfg.noise, &mut rng);
                weight_draws[l] += 1;
                bias_draws[l] += 1;
            }
            if i == 0 {
                acc.push((weight, bias));
                continue;
            }
            let (aw, ab) = &mut acc[l];
            match (aw, weight) {
                (Acc::Spectral(a), Acc::Spectral(s)) => a.iter_mut().zip(s).for_each(|(a, s)| *a += s),
                (Acc::Time(a), Acc::Time(t)) => a.iter_mut().zip(t).for_each(|(a, t)| *a += t),
                _ => unreachable!("one domain per batch"),
            }
            ab.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
        }
    }

    let mut rng = state.derive(0).rng();
    let mut out = Vec::with_capacity(layers.len());
    for (l, ((weight, mut bias), layer)) in acc.into_iter().zip(&layers).enumerate() {
        if !per_sample {
            add_real_noise(&mut bias, &cfg.noise, &mut rng);
            bias_draws[l] += 1;
            weight_draws[l] += 1;
        }
        let weight = match weight {
            Acc::Spectral(mut s) => {
                if !per_sample {
                    add_complex_noise(&mut s, &cfg.noise, &mut rng);
                }
                if let MechanismKind::SpectralDp { rho } = cfg.mechanism {
                    for block in s.chunks_exact_mut(layer.spectrum_block_len()) {
                        lowpass_mask(block, rho);
                    }
                }
                layer.finish_weight_grad(&mut s)
            }
            Acc::Time(mut t) => {
                if !per_sample {
                    add_real_noise(&mut t, &cfg.noise, &mut rng);
                }
                t
            }
        };
        out.push((weight, bias));
    }
    Ok(NoisyGradients {
        layers: out,
        stats: StepStats {
            loss: total_loss / batch.len() as f64,
            weight_noise_draws: weight_draws,
            bias_noise_draws: bias_draws,
        },
    })
}

/// One private update `W <- W - (lr / B) * G`.
pub fn dp_step(model: &mut ModelState, batch: &Batch<'_>, cfg: &TrainingConfig, state: RngState) -> Result<StepStats> {
    let g = noisy_gradient_sum(model, batch, cfg, state)?;
    let scale = cfg.learning_rate / batch.len() as f64;
    for (layer, (gw, gb)) in model.trainable_mut().zip(&g.layers) {
        if let Some((w, b)) = layer.params_mut() {
            w.iter_mut().zip(gw).for_each(|(w, g)| *w -= scale * g);
            b.iter_mut().zip(gb).for_each(|(b, g)| *b -= scale * g);
        }
    }
    model.advance();
    Ok(g.stats)
}

/// One line of the training log, written at the end of each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// Updates applied so far.
    pub step: u64,
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's batches.
    pub train_loss: f64,
    pub val_acc: f64,
    pub epsilon_spent: f64,
}

/// `epochs * floor(N / B)` private updates with shuffled epochs, evaluating
/// on `validation` after each epoch. `on_epoch` sees every log line as soon
/// as it exists.
pub fn train_with(
    mut model: ModelState,
    data: &Dataset,
    validation: &Dataset,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<(ModelState, Vec<EpochMetrics>)> {
    cfg.validate(data.len())?;
    let steps_per_epoch = cfg.steps_per_epoch(data.len());
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 || steps_per_epoch == 0 {
        return Ok((model, log));
    }
    let (_, sampling, noise) = cfg.streams();
    let mut sampler = sampling.rng();
    for epoch in 1..=cfg.epochs {
        let schedule = EpochSchedule::new(data.len(), &mut sampler);
        let mut loss = 0.0;
        for k in 0..steps_per_epoch {
            let batch = Batch::from_indices(data, schedule.batch(k, cfg.batch_size).to_vec());
            let state = noise.derive(model.step());
            loss += dp_step(&mut model, &batch, cfg, state)?.loss;
        }
        let m = EpochMetrics {
            step: model.step(),
            epoch,
            train_loss: loss / steps_per_epoch as f64,
            val_acc: accuracy(&model, validation)?,
            epsilon_spent: cfg.spent_epsilon(model.step())?,
        };
        on_epoch(&m)?;
        log.push(m);
    }
    Ok((model, log))
}

pub fn train(model: ModelState, data: &Dataset, validation: &Dataset, cfg: &TrainingConfig) -> Result<(ModelState, Vec<EpochMetrics>)> {
    train_with(model, data, validation, cfg, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n).map(|i| Tensor::vector(vec![i as f64, 1.0])).collect();
        Dataset::new(samples, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![Tensor::vector(vec![0.0])], vec![], 2).is_err());
        assert!(Dataset::new(vec![Tensor::vector(vec![0.0])], vec![2], 2).is_err());
        assert!(Dataset::new(vec![Tensor::vector(vec![0.0]), Tensor::vector(vec![0.0, 1.0])], vec![0, 1], 2).is_err());
    }

    #[test]
    fn sampling_examples() {
        let data = toy(100);
        let mut r = RngState::new(5).rng();
        let all = sample_batch(&data, 100, &mut r).unwrap();
        let mut idx = all.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..100).collect::<Vec<_>>());
        assert_ne!(all.indices, (0..100).collect::<Vec<_>>());

        let one = toy(1);
        assert_eq!(sample_batch(&one, 1, &mut r).unwrap().indices, vec![0]);
        assert!(sample_batch(&toy(0), 1, &mut r).is_err());
        assert!(sample_batch(&data, 101, &mut r).is_err());

        let a = sample_batch(&data, 10, &mut RngState::new(9).rng()).unwrap().indices;
        let b = sample_batch(&data, 10, &mut RngState::new(9).rng()).unwrap().indices;
        assert_eq!(a, b);
    }

    #[test]
    fn granularity_parsing() {
        assert_eq!("per-batch".parse::<NoiseGranularity>().unwrap(), NoiseGranularity::PerBatch);
        assert_eq!(NoiseGranularity::default(), NoiseGranularity::PerSample);
        assert!("sometimes".parse::<NoiseGranularity>().is_err());
    }
}

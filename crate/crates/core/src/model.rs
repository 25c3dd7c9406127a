//! Sequential models built from the layers module, with per-sample backward
//! passes that hand weight gradients to the training loop as spectra.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{invalid, shape, Error, Result};
use crate::layers::{
    avg_pool2d, avg_pool2d_backward, cross_entropy_loss, max_pool2d, max_pool2d_backward, relu, relu_backward,
    CirculantFc, CirculantFcSpec, Conv2d, ConvLayerSpec, Tensor,
};
use crate::mechanisms::NoiseRng;

/// Largest circulant block used by the presets.
pub const MAX_BLOCK: usize = 16;

/// One layer of a [`ModelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvLayerSpec),
    CircFc(CirculantFcSpec),
    Relu,
    MaxPool(usize),
    AvgPool(usize),
}

/// The evaluated architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    LeNet5,
    ResNet20,
    Model3,
    AlexNet,
    MlpCirculant,
}

impl Preset {
    pub fn label(&self) -> &'static str {
        match self {
            Preset::LeNet5 => "lenet5",
            Preset::ResNet20 => "resnet20",
            Preset::Model3 => "model3",
            Preset::AlexNet => "alexnet",
            Preset::MlpCirculant => "mlp",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lenet5" | "lenet" => Ok(Preset::LeNet5),
            "resnet20" | "resnet" => Ok(Preset::ResNet20),
            "model3" => Ok(Preset::Model3),
            "alexnet" => Ok(Preset::AlexNet),
            "mlp" | "mlpcirculant" => Ok(Preset::MlpCirculant),
            _ => Err(invalid(format!("unknown model `{s}`"))),
        }
    }
}

/// Layer list plus the input shape it was validated against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    input: (usize, usize, usize),
    layers: Vec<LayerSpec>,
}

/// Shape bookkeeping for [`ModelSpec`] construction.
struct Builder {
    shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn conv(mut self, kernels: usize, d: usize) -> Result<Self> {
        let (c, h, w) = self.shape;
        let spec = ConvLayerSpec::new(c, kernels, d, h, w)?;
        self.shape = (kernels, spec.out_height(), spec.out_width());
        self.layers.push(LayerSpec::Conv(spec));
        self.layers.push(LayerSpec::Relu);
        Ok(self)
    }

    fn pool(mut self, k: usize, max: bool) -> Result<Self> {
        let (c, h, w) = self.shape;
        if k > h || k > w {
            return Err(invalid(format!("pool {k}x{k} does not fit a {h}x{w} feature map")));
        }
        self.shape = (c, h / k, w / k);
        self.layers.push(if max { LayerSpec::MaxPool(k) } else { LayerSpec::AvgPool(k) });
        Ok(self)
    }

    fn fc(mut self, units: usize, last: bool) -> Result<Self> {
        let n = self.shape.0 * self.shape.1 * self.shape.2;
        self.layers.push(LayerSpec::CircFc(CirculantFcSpec::with_max_block(units, n, MAX_BLOCK)?));
        if !last {
            self.layers.push(LayerSpec::Relu);
        }
        self.shape = (units, 1, 1);
        Ok(self)
    }

    fn fcs(mut self, units: &[usize]) -> Result<Self> {
        for (i, &u) in units.iter().enumerate() {
            self = self.fc(u, i + 1 == units.len())?;
        }
        Ok(self)
    }
}

impl ModelSpec {
    /// Builds a preset for inputs of shape `(channels, height, width)`. The
    /// final fully-connected layer always has `classes` units. Convolutions
    /// are unpadded, so the deeper stacks need large enough inputs: the
    /// AlexNet-style stack needs at least 94x94.
    pub fn preset(preset: Preset, input: (usize, usize, usize), classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("a classifier needs at least two classes"));
        }
        let b = Builder {
            shape: input,
            layers: Vec::new(),
        };
        let b = match preset {
            Preset::LeNet5 => b.conv(6, 5)?.pool(2, true)?.conv(6, 5)?.pool(2, true)?.fcs(&[120, 84, classes])?,
            Preset::ResNet20 => b
                .conv(7, 3)?
                .pool(2, false)?
                .conv(6, 3)?
                .pool(2, false)?
                .conv(6, 3)?
                .pool(2, false)?
                .fcs(&[64, classes])?,
            Preset::Model3 => b
                .conv(2, 3)?
                .pool(2, true)?
                .conv(2, 3)?
                .pool(2, true)?
                .conv(2, 3)?
                .pool(2, true)?
                .fcs(&[120, classes])?,
            Preset::AlexNet => {
                let mut b = b;
                for _ in 0..5 {
                    b = b.conv(1, 3)?.pool(2, true)?;
                }
                b.fcs(&[120, 84, classes])?
            }
            Preset::MlpCirculant => b.fcs(&[64, classes])?,
        };
        Self::new(input, b.layers)
    }

    /// Stack of circulant layers `inputs -> hidden... -> classes` with ReLU
    /// between them.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let b = Builder {
            shape: (inputs, 1, 1),
            layers: Vec::new(),
        };
        let units: Vec<usize> = hidden.iter().copied().chain(std::iter::once(classes)).collect();
        Self::new((inputs, 1, 1), b.fcs(&units)?.layers)
    }

    /// Validates that consecutive layer shapes line up.
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>) -> Result<Self> {
        let mut s = input;
        for l in &layers {
            s = match *l {
                LayerSpec::Conv(c) => {
                    if (c.in_channels, c.height, c.width) != s {
                        return Err(shape("conv layer input", format!("{s:?}"), format!("{:?}", (c.in_channels, c.height, c.width))));
                    }
                    (c.out_channels, c.out_height(), c.out_width())
                }
                LayerSpec::CircFc(f) => {
                    if f.inputs != s.0 * s.1 * s.2 {
                        return Err(shape("circulant layer input", s.0 * s.1 * s.2, f.inputs));
                    }
                    (f.outputs, 1, 1)
                }
                LayerSpec::Relu => s,
                LayerSpec::MaxPool(k) | LayerSpec::AvgPool(k) => {
                    if k == 0 || k > s.1 || k > s.2 {
                        return Err(invalid(format!("pool {k} does not fit {s:?}")));
                    }
                    (s.0, s.1 / k, s.2 / k)
                }
            };
        }
        if s.1 != 1 || s.2 != 1 {
            return Err(invalid("model must end in a fully-connected layer"));
        }
        Ok(Self { input, layers })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::CircFc(f) => Some(f.outputs),
                _ => None,
            })
            .unwrap_or(0)
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    CircFc(CirculantFc),
    Relu,
    MaxPool(usize),
    AvgPool(usize),
}

impl Layer {
    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::CircFc(_))
    }

    pub fn weight(&self) -> &[f64] {
        match self {
            Layer::Conv(c) => c.weight(),
            Layer::CircFc(f) => f.weight(),
            _ => &[],
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            Layer::Conv(c) => c.bias(),
            Layer::CircFc(f) => f.bias(),
            _ => &[],
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Conv(c) => Some(c.params_mut()),
            Layer::CircFc(f) => Some(f.params_mut()),
            _ => None,
        }
    }

    /// Converts a weight-gradient spectrum of this layer to time-domain weights.
    pub fn finish_weight_grad(&self, spectrum: &mut [Complex64]) -> Vec<f64> {
        match self {
            Layer::Conv(c) => c.finish_weight_grad(spectrum),
            Layer::CircFc(f) => f.finish_weight_grad(spectrum.to_vec()),
            _ => Vec::new(),
        }
    }

    /// Boundaries of the independent transform blocks inside this layer's
    /// weight spectrum (one per kernel or circulant block).
    pub fn spectrum_block_len(&self) -> usize {
        match self {
            Layer::Conv(c) => c.spec().plane_len(),
            Layer::CircFc(f) => f.spec().block,
            _ => 0,
        }
    }
}

/// Gradients of one trainable layer for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<W> {
    pub weight: W,
    pub bias: Vec<f64>,
}

/// How [`ModelState::backward`] should return weight gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradDomain {
    /// Frequency-domain products, before the inverse transform.
    Spectral,
    /// Ordinary weight gradients.
    Time,
}

/// Weight gradient in the domain requested from [`ModelState::backward`].
#[derive(Debug, Clone, PartialEq)]
pub enum WeightGrad {
    Spectral(Vec<Complex64>),
    Time(Vec<f64>),
}

/// One sample's loss and gradients, one entry per trainable layer in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrads {
    pub loss: f64,
    pub layers: Vec<LayerGrad<WeightGrad>>,
}

/// Time-domain per-sample gradients: `(weights, bias)` per trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    pub loss: f64,
    pub layers: Vec<LayerGrad<Vec<f64>>>,
}

enum Cache {
    Conv(Tensor),
    Fc(Vec<f64>, (usize, usize, usize)),
    Relu(Tensor),
    Max(Vec<usize>, (usize, usize, usize)),
    Avg((usize, usize, usize)),
}

/// Parameters of every layer plus the number of updates applied so far.
#[derive(Debug, Clone)]
pub struct ModelState {
    spec: ModelSpec,
    layers: Vec<Layer>,
    step: u64,
}

impl ModelState {
    /// Uniform `1/sqrt(fan_in)` initialization.
    pub fn init(spec: ModelSpec, rng: &mut NoiseRng) -> Result<Self> {
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                Ok(match *l {
                    LayerSpec::Conv(c) => Layer::Conv(Conv2d::init(c, rng)?),
                    LayerSpec::CircFc(f) => Layer::CircFc(CirculantFc::init(f, rng)?),
                    LayerSpec::Relu => Layer::Relu,
                    LayerSpec::MaxPool(k) => Layer::MaxPool(k),
                    LayerSpec::AvgPool(k) => Layer::AvgPool(k),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, layers, step: 0 })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Layer> {
        self.layers.iter().filter(|l| l.is_trainable())
    }

    pub(crate) fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.layers.iter_mut().filter(|l| l.is_trainable())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance(&mut self) {
        self.step += 1;
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().map(|l| l.weight().len() + l.bias().len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.trainable().flat_map(|l| l.weight().iter().chain(l.bias()).copied()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.spec.input {
            return Err(shape("model input", format!("{:?}", self.spec.input), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in &self.layers {
            a = match l {
                Layer::Conv(c) => c.forward(&a)?,
                Layer::CircFc(f) => Tensor::vector(f.forward(&a.data)?),
                Layer::Relu => relu(&a),
                Layer::MaxPool(k) => max_pool2d(&a, *k)?.0,
                Layer::AvgPool(k) => avg_pool2d(&a, *k)?,
            };
        }
        Ok(a.data)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(&logits))
    }

    fn forward_trace(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<Cache>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for l in &self.layers {
            let shape = a.shape();
            let (next, cache) = match l {
                Layer::Conv(c) => (c.forward(&a)?, Cache::Conv(a)),
                Layer::CircFc(f) => (Tensor::vector(f.forward(&a.data)?), Cache::Fc(a.data, shape)),
                Layer::Relu => (relu(&a), Cache::Relu(a)),
                Layer::MaxPool(k) => {
                    let (y, arg) = max_pool2d(&a, *k)?;
                    (y, Cache::Max(arg, shape))
                }
                Layer::AvgPool(k) => (avg_pool2d(&a, *k)?, Cache::Avg(shape)),
            };
            caches.push(cache);
            a = next;
        }
        Ok((a.data, caches))
    }

    /// Loss and per-layer gradients of one labelled sample.
    pub fn backward(&self, x: &Tensor, label: usize, domain: GradDomain) -> Result<SampleGrads> {
        let (logits, caches) = self.forward_trace(x)?;
        let (loss, dlogits) = cross_entropy_loss(&logits, label)?;
        let mut up = Tensor::vector(dlogits);
        let mut grads = Vec::new();
        for (idx, (l, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_input = idx > 0;
            up = match (l, cache) {
                (Layer::Conv(c), Cache::Conv(input)) => {
                    let weight = match domain {
                        GradDomain::Spectral => WeightGrad::Spectral(c.weight_grad_spectrum(&up, &c.input_spectra(&input)?)?),
                        GradDomain::Time => WeightGrad::Time(conv_weight_grad_direct(c.spec(), &up, &input)),
                    };
                    grads.push(LayerGrad {
                        weight,
                        bias: c.bias_grad(&up),
                    });
                    if need_input {
                        c.input_grad(&up)?
                    } else {
                        up
                    }
                }
                (Layer::CircFc(f), Cache::Fc(input, in_shape)) => {
                    let spectrum = f.weight_grad_spectrum(&up.data, &f.input_spectra(&input)?)?;
                    let weight = match domain {
                        GradDomain::Spectral => WeightGrad::Spectral(spectrum),
                        GradDomain::Time => WeightGrad::Time(f.finish_weight_grad(spectrum)),
                    };
                    grads.push(LayerGrad {
                        weight,
                        bias: f.bias_grad(&up.data),
                    });
                    if need_input {
                        let (c, h, w) = in_shape;
                        Tensor::from_vec(c, h, w, f.input_grad(&up.data)?)?
                    } else {
                        up
                    }
                }
                (Layer::Relu, Cache::Relu(pre)) => relu_backward(&pre, &up)?,
                (Layer::MaxPool(_), Cache::Max(arg, s)) => max_pool2d_backward(&up, &arg, s)?,
                (Layer::AvgPool(k), Cache::Avg(s)) => avg_pool2d_backward(&up, *k, s)?,
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
        grads.reverse();
        Ok(SampleGrads { loss, layers: grads })
    }

    /// Time-domain per-sample gradients.
    pub fn per_sample_grads(&self, x: &Tensor, label: usize) -> Result<PerSampleGrads> {
        let g = self.backward(x, label, GradDomain::Time)?;
        Ok(PerSampleGrads {
            loss: g.loss,
            layers: g
                .layers
                .into_iter()
                .map(|l| LayerGrad {
                    weight: match l.weight {
                        WeightGrad::Time(w) => w,
                        WeightGrad::Spectral(_) => unreachable!(),
                    },
                    bias: l.bias,
                })
                .collect(),
        })
    }
}

/// Direct `dL/dW` of a convolution, `[out][in][u][v]`.
fn conv_weight_grad_direct(s: &ConvLayerSpec, up: &Tensor, x: &Tensor) -> Vec<f64> {
    let (d, ho, wo) = (s.kernel, s.out_height(), s.out_width());
    let mut g = vec![0.0; s.weight_len()];
    for o in 0..s.out_channels {
        let u_plane = up.plane(o);
        for i in 0..s.in_channels {
            let x_plane = x.plane(i);
            let kernel = &mut g[(o * s.in_channels + i) * d * d..][..d * d];
            for u in 0..d {
                for v in 0..d {
                    let mut acc = 0.0;
                    for y in 0..ho {
                        let xs = &x_plane[(y + u) * s.width + v..][..wo];
                        let us = &u_plane[y * wo..][..wo];
                        acc += xs.iter().zip(us).map(|(a, b)| a * b).sum::<f64>();
                    }
                    kernel[u * d + v] = acc;
                }
            }
        }
    }
    g
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

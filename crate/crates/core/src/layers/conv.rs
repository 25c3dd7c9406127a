use num_complex::Complex64;

use super::{init_bound, Tensor};
use crate::error::{invalid, shape, Result};
use crate::mechanisms::{add_real_noise, clip_in_place, lowpass_mask, add_complex_noise, MechanismKind, NoiseRng, NoiseSpec};
use crate::spectral::{check_finite_real, Fft2dPlan, RealMat};

/// Shape of a stride-1, unpadded 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvLayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, height: usize, width: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || height == 0 || width == 0 {
            return Err(invalid("convolution dimensions must be positive"));
        }
        if kernel > height || kernel > width {
            return Err(invalid(format!(
                "kernel {kernel}x{kernel} does not fit a {height}x{width} input"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            height,
            width,
        })
    }

    pub fn out_height(&self) -> usize {
        self.height - self.kernel + 1
    }

    pub fn out_width(&self) -> usize {
        self.width - self.kernel + 1
    }

    /// Number of kernel weights, `c_out * c_in * d * d`.
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Pairs `(o, i)`, one per `d x d` kernel.
    pub fn kernel_count(&self) -> usize {
        self.out_channels * self.in_channels
    }

    /// Size of each kernel's gradient spectrum (the padded input plane).
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = (self.in_channels, self.height, self.width);
        if x.shape() != want {
            return Err(shape("conv2d input", format!("{want:?}"), format!("{:?}", x.shape())));
        }
        Ok(())
    }

    fn check_upstream(&self, u: &Tensor) -> Result<()> {
        let want = (self.out_channels, self.out_height(), self.out_width());
        if u.shape() != want {
            return Err(shape("conv2d upstream", format!("{want:?}"), format!("{:?}", u.shape())));
        }
        Ok(())
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.weight_len() {
            return Err(shape("conv2d weights", self.weight_len(), w.len()));
        }
        Ok(())
    }
}

/// A convolution layer. Weights are stored `[out][in][row][col]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    spec: ConvLayerSpec,
    weight: Vec<f64>,
    bias: Vec<f64>,
    plan: Fft2dPlan,
}

impl Conv2d {
    pub fn new(spec: ConvLayerSpec, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        spec.check_weights(&weight)?;
        if bias.len() != spec.out_channels {
            return Err(shape("conv2d bias", spec.out_channels, bias.len()));
        }
        let plan = Fft2dPlan::new(spec.height, spec.width)?;
        Ok(Self {
            spec,
            weight,
            bias,
            plan,
        })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and biases.
    pub fn init(spec: ConvLayerSpec, rng: &mut NoiseRng) -> Result<Self> {
        let bound = init_bound(spec.in_channels * spec.kernel * spec.kernel);
        let weight = (0..spec.weight_len()).map(|_| rng.uniform(-bound, bound)).collect();
        let bias = (0..spec.out_channels).map(|_| rng.uniform(-bound, bound)).collect();
        Self::new(spec, weight, bias)
    }

    pub fn spec(&self) -> &ConvLayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weight, &mut self.bias)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = conv2d_forward(x, &self.weight, &self.spec)?;
        let plane = self.spec.out_height() * self.spec.out_width();
        for (o, chunk) in out.data.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += self.bias[o]);
        }
        Ok(out)
    }

    /// `dL/dx` given `dL/d(output)`: a full convolution of the upstream
    /// gradient with each kernel.
    pub fn input_grad(&self, upstream: &Tensor) -> Result<Tensor> {
        let s = &self.spec;
        s.check_upstream(upstream)?;
        let (d, ho, wo) = (s.kernel, s.out_height(), s.out_width());
        let mut dx = Tensor::zeros(s.in_channels, s.height, s.width);
        for o in 0..s.out_channels {
            let up = upstream.plane(o);
            for i in 0..s.in_channels {
                let kernel = &self.weight[(o * s.in_channels + i) * d * d..][..d * d];
                let plane = dx.plane_mut(i);
                for u in 0..d {
                    for v in 0..d {
                        let w = kernel[u * d + v];
                        for y in 0..ho {
                            let dst = &mut plane[(y + u) * s.width + v..][..wo];
                            let src = &up[y * wo..][..wo];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += w * b);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn bias_grad(&self, upstream: &Tensor) -> Vec<f64> {
        (0..self.spec.out_channels)
            .map(|o| upstream.plane(o).iter().sum())
            .collect()
    }

    /// Forward spectra `F(X_i)` of every input channel.
    pub fn input_spectra(&self, x: &Tensor) -> Result<Vec<Vec<Complex64>>> {
        self.spec.check_input(x)?;
        Ok((0..self.spec.in_channels)
            .map(|i| {
                let mut buf: Vec<Complex64> = x.plane(i).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                self.plan.forward_in_place(&mut buf);
                buf
            })
            .collect())
    }

    /// Per-sample weight gradient in the frequency domain, flattened as
    /// `[out][in][h*w]`.
    ///
    /// Each block is `sqrt(h w) * conj(F(pad(dL/do_o))) * F(X_i)`, the
    /// spectrum of the circular cross-correlation of the input with the
    /// zero-padded upstream gradient. Its leading `d x d` corner in the time
    /// domain is exactly `dL/dW_{o,i}`.
    pub fn weight_grad_spectrum(&self, upstream: &Tensor, input_spectra: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        let s = &self.spec;
        s.check_upstream(upstream)?;
        if input_spectra.len() != s.in_channels {
            return Err(shape("conv2d input spectra", s.in_channels, input_spectra.len()));
        }
        let n = s.plane_len();
        let scale = (n as f64).sqrt();
        let (ho, wo) = (s.out_height(), s.out_width());
        let mut out = vec![Complex64::new(0.0, 0.0); s.kernel_count() * n];
        let mut padded = vec![Complex64::new(0.0, 0.0); n];
        for o in 0..s.out_channels {
            padded.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            let up = upstream.plane(o);
            for y in 0..ho {
                for x in 0..wo {
                    padded[y * s.width + x] = Complex64::new(up[y * wo + x], 0.0);
                }
            }
            self.plan.forward_in_place(&mut padded);
            for (i, xs) in input_spectra.iter().enumerate() {
                let block = &mut out[(o * s.in_channels + i) * n..][..n];
                for ((g, u), x) in block.iter_mut().zip(&padded).zip(xs) {
                    *g = u.conj() * x * scale;
                }
            }
        }
        Ok(out)
    }

    /// Inverse-transforms each `h x w` block of a (possibly perturbed)
    /// gradient spectrum, keeps real parts and crops to `d x d`. Returns
    /// weights in storage order. The buffer is consumed as scratch space.
    pub fn finish_weight_grad(&self, spectrum: &mut [Complex64]) -> Vec<f64> {
        let s = &self.spec;
        let n = s.plane_len();
        debug_assert_eq!(spectrum.len(), s.kernel_count() * n);
        let d = s.kernel;
        let mut out = Vec::with_capacity(s.weight_len());
        for block in spectrum.chunks_exact_mut(n) {
            self.plan.inverse_in_place(block);
            for u in 0..d {
                out.extend(block[u * s.width..][..d].iter().map(|z| z.re));
            }
        }
        out
    }

    /// Noise-free weight gradient through the spectral route.
    pub fn weight_grad(&self, upstream: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
        let xs = self.input_spectra(x)?;
        let mut g = self.weight_grad_spectrum(upstream, &xs)?;
        Ok(self.finish_weight_grad(&mut g))
    }
}

/// Valid, stride-1 cross-correlation `o_i = sum_j X_j (*) W_{i,j}` without bias.
/// `w` is laid out `[out][in][row][col]`.
pub fn conv2d_forward(x: &Tensor, w: &[f64], spec: &ConvLayerSpec) -> Result<Tensor> {
    spec.check_input(x)?;
    spec.check_weights(w)?;
    let (d, ho, wo) = (spec.kernel, spec.out_height(), spec.out_width());
    let mut out = Tensor::zeros(spec.out_channels, ho, wo);
    for o in 0..spec.out_channels {
        let dst = out.plane_mut(o);
        for i in 0..spec.in_channels {
            let src = x.plane(i);
            let kernel = &w[(o * spec.in_channels + i) * d * d..][..d * d];
            for u in 0..d {
                for v in 0..d {
                    let k = kernel[u * d + v];
                    for y in 0..ho {
                        let row = &src[(y + u) * spec.width + v..][..wo];
                        dst[y * wo..][..wo].iter_mut().zip(row).for_each(|(a, b)| *a += k * b);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-kernel privatized weight gradient of a convolution.
///
/// The spectral product for each `(out, in)` kernel is perturbed on its own:
/// GReDP and Spectral-DP clip and noise the `h x w` spectrum before the
/// inverse transform; DPSGD clips and noises the cropped `d x d` gradient.
/// Returns one `d x d` matrix per kernel in `[out][in]` order.
pub fn conv2d_weight_grad_spectral(
    upstream: &Tensor,
    x: &Tensor,
    layer: &ConvLayerSpec,
    noise: &NoiseSpec,
    mech: MechanismKind,
    rng: &mut NoiseRng,
) -> Result<Vec<RealMat>> {
    check_finite_real(&upstream.data)?;
    check_finite_real(&x.data)?;
    // weights do not enter the weight gradient
    let conv = Conv2d::new(*layer, vec![0.0; layer.weight_len()], vec![0.0; layer.out_channels])?;
    let xs = conv.input_spectra(x)?;
    let mut spectrum = conv.weight_grad_spectrum(upstream, &xs)?;
    let n = layer.plane_len();
    let d = layer.kernel;
    if mech.is_spectral() {
        for block in spectrum.chunks_exact_mut(n) {
            clip_in_place(block, noise.clip());
            add_complex_noise(block, noise, rng);
            if let MechanismKind::SpectralDp { rho } = mech {
                lowpass_mask(block, rho);
            }
        }
    }
    let grads = conv.finish_weight_grad(&mut spectrum);
    grads
        .chunks_exact(d * d)
        .map(|k| {
            let mut k = k.to_vec();
            if !mech.is_spectral() {
                clip_in_place(&mut k, noise.clip());
                add_real_noise(&mut k, noise, rng);
            }
            RealMat::from_vec(d, d, k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::RngState;

    fn rng(seed: u64) -> NoiseRng {
        RngState::new(seed).rng()
    }

    fn random_tensor(r: &mut NoiseRng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ConvLayerSpec::new(1, 1, 4, 3, 5).is_err());
        assert!(ConvLayerSpec::new(0, 1, 1, 3, 3).is_err());
        let s = ConvLayerSpec::new(2, 3, 3, 8, 10).unwrap();
        assert_eq!((s.out_height(), s.out_width()), (6, 8));
        assert_eq!(s.weight_len(), 54);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let spec = ConvLayerSpec::new(1, 1, 1, 4, 5).unwrap();
        let x = random_tensor(&mut rng(1), 1, 4, 5);
        assert_eq!(conv2d_forward(&x, &[1.0], &spec).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_windows() {
        let spec = ConvLayerSpec::new(1, 1, 2, 3, 3).unwrap();
        let x = Tensor::from_vec(1, 3, 3, vec![1.0; 9]).unwrap();
        let out = conv2d_forward(&x, &[1.0; 4], &spec).unwrap();
        assert_eq!(out.shape(), (1, 2, 2));
        assert_eq!(out.data, vec![4.0; 4]);
    }

    #[test]
    fn shape_errors_name_both_sides() {
        let spec = ConvLayerSpec::new(2, 1, 3, 5, 5).unwrap();
        let x = Tensor::zeros(1, 5, 5);
        let err = conv2d_forward(&x, &[0.0; 18], &spec).unwrap_err().to_string();
        assert!(err.contains("(2, 5, 5)") && err.contains("(1, 5, 5)"), "{err}");
        assert!(conv2d_forward(&Tensor::zeros(2, 5, 5), &[0.0; 3], &spec).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let spec = ConvLayerSpec::new(2, 3, 3, 6, 6).unwrap();
        let noise = NoiseSpec::new(1.0, 0.0).unwrap();
        let x = random_tensor(&mut rng(2), 2, 6, 6);
        let up = Tensor::zeros(3, 4, 4);
        let g = conv2d_weight_grad_spectral(&up, &x, &spec, &noise, MechanismKind::Gredp, &mut rng(0)).unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.iter().all(|m| m.as_slice().iter().all(|v| v.abs() < 1e-15)));
    }

    #[test]
    fn spectral_gradient_matches_sliding_windows() {
        let spec = ConvLayerSpec::new(1, 1, 2, 3, 3).unwrap();
        let x = random_tensor(&mut rng(3), 1, 3, 3);
        let up = Tensor::from_vec(1, 2, 2, vec![1.0; 4]).unwrap();
        let noise = NoiseSpec::new(1e9, 0.0).unwrap();
        let g = conv2d_weight_grad_spectral(&up, &x, &spec, &noise, MechanismKind::Gredp, &mut rng(0)).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                let mut want = 0.0;
                for y in 0..2 {
                    for xx in 0..2 {
                        want += x.at(0, y + u, xx + v);
                    }
                }
                assert!((g[0].get(u, v) - want).abs() < 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn per_kernel_clipping_bounds_each_kernel() {
        let spec = ConvLayerSpec::new(2, 2, 3, 7, 7).unwrap();
        let x = random_tensor(&mut rng(4), 2, 7, 7);
        let up = random_tensor(&mut rng(5), 2, 5, 5);
        let noise = NoiseSpec::new(0.1, 0.0).unwrap();
        let g = conv2d_weight_grad_spectral(&up, &x, &spec, &noise, MechanismKind::Dpsgd, &mut rng(0)).unwrap();
        for k in &g {
            let norm = k.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 0.1 + 1e-12);
        }
    }
}

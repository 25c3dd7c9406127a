use num_complex::Complex64;

use super::init_bound;
use crate::error::{invalid, shape, Result};
use crate::mechanisms::{add_complex_noise, add_real_noise, clip_in_place, lowpass_mask, MechanismKind, NoiseRng, NoiseSpec};
use crate::spectral::{check_finite_real, FftPlan};

/// Block-circulant fully-connected layer shape: `inputs -> outputs` split
/// into `d x d` circulant blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CirculantFcSpec {
    pub outputs: usize,
    pub inputs: usize,
    pub block: usize,
}

impl CirculantFcSpec {
    pub fn new(outputs: usize, inputs: usize, block: usize) -> Result<Self> {
        if outputs == 0 || inputs == 0 || block == 0 {
            return Err(invalid("circulant layer dimensions must be positive"));
        }
        if outputs % block != 0 || inputs % block != 0 {
            return Err(invalid(format!(
                "block size {block} must divide both {outputs} outputs and {inputs} inputs"
            )));
        }
        Ok(Self { outputs, inputs, block })
    }

    /// Largest block size not above `max_block` that divides both sides.
    pub fn with_max_block(outputs: usize, inputs: usize, max_block: usize) -> Result<Self> {
        let g = gcd(outputs, inputs);
        let block = (1..=max_block.min(g)).rev().find(|d| g % d == 0).unwrap_or(1);
        Self::new(outputs, inputs, block)
    }

    /// `(p, q)`: block rows and block columns.
    pub fn grid(&self) -> (usize, usize) {
        (self.outputs / self.block, self.inputs / self.block)
    }

    /// Stored parameters: one length-`d` defining vector per block.
    pub fn weight_len(&self) -> usize {
        let (p, q) = self.grid();
        p * q * self.block
    }

    fn check(&self, what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(shape(what, expected, got));
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Fully-connected layer whose weight matrix is made of circulant blocks.
///
/// Block `(i, j)` is defined by its first row `w_ij`, so
/// `W_ij[r][c] = w_ij[(c - r) mod d]`. Weights are stored `[i][j][k]`.
#[derive(Debug, Clone)]
pub struct CirculantFc {
    spec: CirculantFcSpec,
    weight: Vec<f64>,
    bias: Vec<f64>,
    plan: FftPlan,
}

impl CirculantFc {
    pub fn new(spec: CirculantFcSpec, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        spec.check("circulant weights", spec.weight_len(), weight.len())?;
        spec.check("circulant bias", spec.outputs, bias.len())?;
        let plan = FftPlan::new(spec.block)?;
        Ok(Self { spec, weight, bias, plan })
    }

    /// Uniform `[-1/sqrt(n), 1/sqrt(n)]` weights and biases.
    pub fn init(spec: CirculantFcSpec, rng: &mut NoiseRng) -> Result<Self> {
        let bound = init_bound(spec.inputs);
        let weight = (0..spec.weight_len()).map(|_| rng.uniform(-bound, bound)).collect();
        let bias = (0..spec.outputs).map(|_| rng.uniform(-bound, bound)).collect();
        Self::new(spec, weight, bias)
    }

    pub fn spec(&self) -> &CirculantFcSpec {
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

    fn spectra(&self, v: &[f64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        for chunk in out.chunks_exact_mut(self.spec.block) {
            self.plan.forward_in_place(chunk);
        }
        out
    }

    fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        for chunk in buf.chunks_exact_mut(self.spec.block) {
            self.plan.inverse_in_place(chunk);
        }
        buf.into_iter().map(|z| z.re).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = circfc_forward_with(self, x)?;
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        Ok(out)
    }

    /// Frequency-domain form of the input `F(x_j)`, flattened `[j][k]`.
    pub fn input_spectra(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        self.spec.check("circulant input", self.spec.inputs, x.len())?;
        Ok(self.spectra(x))
    }

    /// `dL/dx` from `dL/do`: `F(dx_j) = sqrt(d) sum_i F(u_i) * F(w_ij)`.
    pub fn input_grad(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        let s = &self.spec;
        s.check("circulant upstream", s.outputs, upstream.len())?;
        let d = s.block;
        let (p, q) = s.grid();
        let fu = self.spectra(upstream);
        let fw = self.spectra(&self.weight);
        let scale = (d as f64).sqrt();
        let mut acc = vec![Complex64::new(0.0, 0.0); s.inputs];
        for i in 0..p {
            let u = &fu[i * d..][..d];
            for j in 0..q {
                let w = &fw[(i * q + j) * d..][..d];
                for ((a, u), w) in acc[j * d..][..d].iter_mut().zip(u).zip(w) {
                    *a += u * w * scale;
                }
            }
        }
        Ok(self.inverse_real(acc))
    }

    pub fn bias_grad(&self, upstream: &[f64]) -> Vec<f64> {
        upstream.to_vec()
    }

    /// Per-sample weight gradient spectrum, flattened `[i][j][k]`:
    /// `G_ij = sqrt(d) conj(F(u_i)) * F(x_j)`.
    pub fn weight_grad_spectrum(&self, upstream: &[f64], input_spectra: &[Complex64]) -> Result<Vec<Complex64>> {
        let s = &self.spec;
        s.check("circulant upstream", s.outputs, upstream.len())?;
        s.check("circulant input spectra", s.inputs, input_spectra.len())?;
        let d = s.block;
        let (p, q) = s.grid();
        let scale = (d as f64).sqrt();
        let fu = self.spectra(upstream);
        let mut out = Vec::with_capacity(s.weight_len());
        for i in 0..p {
            let u = &fu[i * d..][..d];
            for j in 0..q {
                let x = &input_spectra[j * d..][..d];
                out.extend(u.iter().zip(x).map(|(u, x)| u.conj() * x * scale));
            }
        }
        Ok(out)
    }

    /// Inverse transform and real part of each length-`d` block.
    pub fn finish_weight_grad(&self, spectrum: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.spec.weight_len());
        self.inverse_real(spectrum)
    }

    /// Noise-free weight gradient through the spectral route.
    pub fn weight_grad(&self, upstream: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let xs = self.input_spectra(x)?;
        Ok(self.finish_weight_grad(self.weight_grad_spectrum(upstream, &xs)?))
    }
}

fn circfc_forward_with(layer: &CirculantFc, x: &[f64]) -> Result<Vec<f64>> {
    let s = &layer.spec;
    s.check("circulant input", s.inputs, x.len())?;
    let d = s.block;
    let (p, q) = s.grid();
    let fx = layer.spectra(x);
    let fw = layer.spectra(&layer.weight);
    let scale = (d as f64).sqrt();
    let mut acc = vec![Complex64::new(0.0, 0.0); s.outputs];
    for i in 0..p {
        let dst = &mut acc[i * d..][..d];
        for j in 0..q {
            let w = &fw[(i * q + j) * d..][..d];
            let xj = &fx[j * d..][..d];
            for ((a, w), x) in dst.iter_mut().zip(w).zip(xj) {
                *a += w.conj() * x * scale;
            }
        }
    }
    Ok(layer.inverse_real(acc))
}

/// `o_i = sum_j W_ij x_j` evaluated in the frequency domain, without bias.
pub fn circfc_forward(x: &[f64], weight: &[f64], spec: &CirculantFcSpec) -> Result<Vec<f64>> {
    check_finite_real(x)?;
    let layer = CirculantFc::new(*spec, weight.to_vec(), vec![0.0; spec.outputs])?;
    circfc_forward_with(&layer, x)
}

/// Per-block privatized weight gradient of a circulant layer.
///
/// Spectral mechanisms clip, noise and optionally mask each length-`d`
/// spectrum before the inverse transform; DPSGD perturbs each length-`d`
/// time-domain gradient. Returns one vector per block in `[i][j]` order.
pub fn circfc_weight_grad_spectral(
    upstream: &[f64],
    x: &[f64],
    spec: &CirculantFcSpec,
    noise: &NoiseSpec,
    mech: MechanismKind,
    rng: &mut NoiseRng,
) -> Result<Vec<Vec<f64>>> {
    check_finite_real(upstream)?;
    check_finite_real(x)?;
    let layer = CirculantFc::new(*spec, vec![0.0; spec.weight_len()], vec![0.0; spec.outputs])?;
    let xs = layer.input_spectra(x)?;
    let mut g = layer.weight_grad_spectrum(upstream, &xs)?;
    if mech.is_spectral() {
        for block in g.chunks_exact_mut(spec.block) {
            clip_in_place(block, noise.clip());
            add_complex_noise(block, noise, rng);
            if let MechanismKind::SpectralDp { rho } = mech {
                lowpass_mask(block, rho);
            }
        }
    }
    let real = layer.finish_weight_grad(g);
    Ok(real
        .chunks_exact(spec.block)
        .map(|b| {
            let mut b = b.to_vec();
            if !mech.is_spectral() {
                clip_in_place(&mut b, noise.clip());
                add_real_noise(&mut b, noise, rng);
            }
            b
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(CirculantFcSpec::new(6, 4, 4).is_err());
        assert!(CirculantFcSpec::new(8, 4, 0).is_err());
        assert_eq!(CirculantFcSpec::new(8, 4, 2).unwrap().grid(), (4, 2));
        assert_eq!(CirculantFcSpec::with_max_block(120, 96, 16).unwrap().block, 12);
        assert_eq!(CirculantFcSpec::with_max_block(10, 84, 16).unwrap().block, 2);
        assert_eq!(CirculantFcSpec::with_max_block(7, 5, 16).unwrap().block, 1);
    }

    #[test]
    fn two_by_two_block_by_hand() {
        // W = [[a, b], [b, a]] for first row (a, b)
        let spec = CirculantFcSpec::new(2, 2, 2).unwrap();
        let out = circfc_forward(&[5.0, 7.0], &[2.0, 3.0], &spec).unwrap();
        assert!((out[0] - (2.0 * 5.0 + 3.0 * 7.0)).abs() < 1e-12);
        assert!((out[1] - (3.0 * 5.0 + 2.0 * 7.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let spec = CirculantFcSpec::new(4, 4, 2).unwrap();
        assert!(circfc_forward(&[1.0; 3], &[0.0; 8], &spec).is_err());
        assert!(circfc_forward(&[1.0; 4], &[0.0; 7], &spec).is_err());
    }
}

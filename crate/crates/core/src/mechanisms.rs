//! Gradient perturbation mechanisms.
//!
//! Three ways of privatizing a gradient sequence `g`:
//!
//! * [`MechanismKind::Gredp`]: move `g` into the frequency domain, clip it,
//!   add complex Gaussian noise, transform back and keep only the real part.
//!   The signal survives untouched while half the noise energy lands in the
//!   discarded imaginary component.
//! * [`MechanismKind::Dpsgd`]: clip in the time domain and add real noise.
//! * [`MechanismKind::SpectralDp`]: like GReDP, but before the inverse
//!   transform every coefficient past the first `ceil(rho * N)` is zeroed.
//!
//! The clipping bound doubles as the l2 sensitivity, so the noise standard
//! deviation is always `clip * sigma` (split into `a` and `b` for the real and
//! imaginary parts of complex noise).

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::spectral::{
    check_finite_real, require_len, to_complex, ComplexMat, Fft2dPlan, FftPlan, RealMat,
};

/// How complex noise variance is divided between real and imaginary parts.
/// `a^2 + b^2 = 1`; the real part gets variance `a^2 c^2 sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    a: f64,
    b: f64,
}

impl Split {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(invalid(format!("split ({a}, {b}) must be nonnegative and finite")));
        }
        if (a * a + b * b - 1.0).abs() > 1e-12 {
            return Err(invalid(format!(
                "split ({a}, {b}) must satisfy a^2 + b^2 = 1, got {}",
                a * a + b * b
            )));
        }
        Ok(Self { a, b })
    }

    /// The even split `(1/sqrt 2, 1/sqrt 2)`.
    pub fn balanced() -> Self {
        Self {
            a: std::f64::consts::FRAC_1_SQRT_2,
            b: std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for Split {
    fn default() -> Self {
        Self::balanced()
    }
}

/// Clipping bound, noise multiplier and complex split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    clip: f64,
    sigma: f64,
    split: Split,
}

impl NoiseSpec {
    pub fn new(clip: f64, sigma: f64) -> Result<Self> {
        Self::with_split(clip, sigma, Split::balanced())
    }

    pub fn with_split(clip: f64, sigma: f64, split: Split) -> Result<Self> {
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(invalid(format!("clip bound must be positive and finite, got {clip}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be nonnegative and finite, got {sigma}")));
        }
        Ok(Self { clip, sigma, split })
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Standard deviation `c * sigma` of real-valued noise.
    pub fn noise_std(&self) -> f64 {
        self.clip * self.sigma
    }
}

/// Which perturbation path a gradient takes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismKind {
    Dpsgd,
    SpectralDp { rho: f64 },
    Gredp,
}

impl MechanismKind {
    pub fn spectral_dp(rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(Self::SpectralDp { rho })
    }

    /// Short stable label, used in CSV output and experiment ids.
    pub fn label(&self) -> String {
        match self {
            Self::Dpsgd => "dpsgd".into(),
            Self::SpectralDp { rho } => format!("spectral-dp:{rho}"),
            Self::Gredp => "gredp".into(),
        }
    }

    /// True when the mechanism perturbs the frequency-domain gradient.
    pub fn is_spectral(&self) -> bool {
        !matches!(self, Self::Dpsgd)
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    /// Accepts `dpsgd`, `gredp`, `spectral-dp` (rho 0.5) and `spectral-dp:<rho>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "dpsgd" | "dp-sgd" => Ok(Self::Dpsgd),
            "gredp" => Ok(Self::Gredp),
            "spectral-dp" | "spectraldp" => Self::spectral_dp(0.5),
            other => match other
                .strip_prefix("spectral-dp:")
                .or_else(|| other.strip_prefix("spectraldp:"))
            {
                Some(rho) => {
                    let rho = rho
                        .parse::<f64>()
                        .map_err(|e| invalid(format!("bad spectral-dp ratio {rho:?}: {e}")))?;
                    Self::spectral_dp(rho)
                }
                None => Err(invalid(format!("unknown mechanism {s:?}"))),
            },
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("filtering ratio must lie in (0, 1], got {rho}")))
    }
}

/// Seed plus stream id. Two generators built from equal states emit
/// identical sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// A child state on a stream determined by `(self.stream, tag)`.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix(self.stream ^ splitmix(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn rng(&self) -> NoiseRng {
        NoiseRng::new(*self)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Gaussian source for the mechanisms.
#[derive(Debug, Clone)]
pub struct NoiseRng {
    state: RngState,
    inner: ChaCha8Rng,
}

impl NoiseRng {
    pub fn new(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_stream(state.stream);
        Self { state, inner }
    }

    pub fn state(&self) -> RngState {
        self.state
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// Element types whose l2 norm the clipping step understands.
pub trait Magnitude: Copy {
    fn norm_sqr(self) -> f64;
    fn scaled(self, s: f64) -> Self;
}

impl Magnitude for f64 {
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn scaled(self, s: f64) -> Self {
        self * s
    }
}

impl Magnitude for Complex64 {
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn scaled(self, s: f64) -> Self {
        self * s
    }
}

pub fn l2_norm<T: Magnitude>(v: &[T]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `g / max(1, |g|_2 / c)`.
pub fn clip<T: Magnitude>(g: &[T], c: f64) -> Result<Vec<T>> {
    if !(c > 0.0) {
        return Err(invalid(format!("clip bound must be positive, got {c}")));
    }
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    Ok(out)
}

/// In-place clip; returns the scale factor that was applied.
pub fn clip_in_place<T: Magnitude>(g: &mut [T], c: f64) -> f64 {
    let norm = l2_norm(g);
    if norm <= c {
        return 1.0;
    }
    let s = c / norm;
    g.iter_mut().for_each(|x| *x = x.scaled(s));
    s
}

/// `n` independent complex draws with real part `N(0, a^2 c^2 sigma^2)` and
/// imaginary part `N(0, b^2 c^2 sigma^2)`.
pub fn sample_complex_noise(n: usize, spec: &NoiseSpec, rng: &mut NoiseRng) -> Result<Vec<Complex64>> {
    require_len(n)?;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    add_complex_noise(&mut out, spec, rng);
    Ok(out)
}

pub fn add_complex_noise(buf: &mut [Complex64], spec: &NoiseSpec, rng: &mut NoiseRng) {
    if spec.sigma == 0.0 {
        return;
    }
    let re = spec.split.a * spec.noise_std();
    let im = spec.split.b * spec.noise_std();
    for z in buf {
        let x = rng.standard_normal();
        let y = rng.standard_normal();
        z.re += re * x;
        z.im += im * y;
    }
}

/// Adds `N(0, c^2 sigma^2)` to every entry.
pub fn add_real_noise(buf: &mut [f64], spec: &NoiseSpec, rng: &mut NoiseRng) {
    if spec.sigma == 0.0 {
        return;
    }
    let std = spec.noise_std();
    for x in buf {
        *x += std * rng.standard_normal();
    }
}

/// Number of coefficients Spectral-DP keeps out of `n`: `ceil(rho * n)`.
pub fn retained_coefficients(n: usize, rho: f64) -> usize {
    // the epsilon keeps products like 0.3 * 10 from rounding up to 4
    let k = (rho * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Zeroes every coefficient at index `>= ceil(rho * n)`.
pub fn lowpass_mask(buf: &mut [Complex64], rho: f64) {
    let keep = retained_coefficients(buf.len(), rho);
    buf[keep..].iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
}

/// The FRe pipeline: `Re(F^-1(clip(F(g), c) + tau))`.
pub fn fre(g: &[f64], spec: &NoiseSpec, rng: &mut NoiseRng) -> Result<Vec<f64>> {
    let plan = FftPlan::new(g.len().max(1))?;
    fre_with_plan(g, spec, rng, &plan)
}

/// [`fre`] over a caller-supplied plan.
pub fn fre_with_plan(g: &[f64], spec: &NoiseSpec, rng: &mut NoiseRng, plan: &FftPlan) -> Result<Vec<f64>> {
    spectral_pipeline(g, spec, None, rng, plan)
}

/// Clip in the time domain, then add real noise per coordinate.
pub fn dpsgd_perturb(g: &[f64], spec: &NoiseSpec, rng: &mut NoiseRng) -> Result<Vec<f64>> {
    require_len(g.len())?;
    check_finite_real(g)?;
    let mut out = clip(g, spec.clip)?;
    add_real_noise(&mut out, spec, rng);
    Ok(out)
}

/// FFT, clip, complex noise, keep the first `ceil(rho N)` coefficients,
/// inverse FFT, real part.
pub fn spectraldp_perturb(g: &[f64], spec: &NoiseSpec, rho: f64, rng: &mut NoiseRng) -> Result<Vec<f64>> {
    check_rho(rho)?;
    let plan = FftPlan::new(g.len().max(1))?;
    spectral_pipeline(g, spec, Some(rho), rng, &plan)
}

pub fn spectraldp_with_plan(g: &[f64], spec: &NoiseSpec, rho: f64, rng: &mut NoiseRng, plan: &FftPlan) -> Result<Vec<f64>> {
    check_rho(rho)?;
    spectral_pipeline(g, spec, Some(rho), rng, plan)
}

/// Dispatches to the pipeline selected by `mech`.
pub fn perturb(g: &[f64], spec: &NoiseSpec, mech: MechanismKind, rng: &mut NoiseRng) -> Result<Vec<f64>> {
    match mech {
        MechanismKind::Dpsgd => dpsgd_perturb(g, spec, rng),
        MechanismKind::Gredp => fre(g, spec, rng),
        MechanismKind::SpectralDp { rho } => spectraldp_perturb(g, spec, rho, rng),
    }
}

fn spectral_pipeline(
    g: &[f64],
    spec: &NoiseSpec,
    rho: Option<f64>,
    rng: &mut NoiseRng,
    plan: &FftPlan,
) -> Result<Vec<f64>> {
    require_len(g.len())?;
    check_finite_real(g)?;
    let mut buf = to_complex(g);
    plan.forward_in_place(&mut buf);
    perturb_spectrum(&mut buf, spec, rho, rng);
    plan.inverse_in_place(&mut buf);
    Ok(buf.into_iter().map(|z| z.re).collect())
}

/// Clip, add complex noise and (for Spectral-DP) filter a spectrum in place.
fn perturb_spectrum(buf: &mut [Complex64], spec: &NoiseSpec, rho: Option<f64>, rng: &mut NoiseRng) {
    clip_in_place(buf, spec.clip);
    add_complex_noise(buf, spec, rng);
    if let Some(rho) = rho {
        lowpass_mask(buf, rho);
    }
}

/// 2D FRe: `Re(F2^-1(clip(F2(g), c) + Gamma))`.
pub fn fre2d(g: &RealMat, spec: &NoiseSpec, rng: &mut NoiseRng) -> Result<RealMat> {
    let plan = Fft2dPlan::new(g.rows(), g.cols())?;
    fre2d_with_plan(g, spec, rng, &plan)
}

pub fn fre2d_with_plan(g: &RealMat, spec: &NoiseSpec, rng: &mut NoiseRng, plan: &Fft2dPlan) -> Result<RealMat> {
    check_finite_real(g.as_slice())?;
    let mut m = ComplexMat::from_real(g);
    plan.forward_in_place(m.as_mut_slice());
    perturb_spectrum(m.as_mut_slice(), spec, None, rng);
    plan.inverse_in_place(m.as_mut_slice());
    Ok(m.real_part())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Normalization;
    use proptest::prelude::*;

    fn rng(seed: u64) -> NoiseRng {
        RngState::new(seed).rng()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn split_validation() {
        assert!(Split::new(0.6, 0.8).is_ok());
        assert!(Split::new(1.0, 0.0).is_ok());
        assert!(Split::new(0.6, 0.6).is_err());
        assert!(Split::new(-0.6, 0.8).is_err());
        let s = Split::balanced();
        assert!((s.a() * s.a() + s.b() * s.b() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::new(0.0, 1.0).is_err());
        assert!(NoiseSpec::new(-1.0, 1.0).is_err());
        assert!(NoiseSpec::new(1.0, -0.1).is_err());
        assert!(NoiseSpec::new(1.0, f64::NAN).is_err());
        assert!(NoiseSpec::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn mechanism_parsing() {
        assert_eq!("gredp".parse::<MechanismKind>().unwrap(), MechanismKind::Gredp);
        assert_eq!("DPSGD".parse::<MechanismKind>().unwrap(), MechanismKind::Dpsgd);
        assert_eq!(
            "spectral-dp:0.25".parse::<MechanismKind>().unwrap(),
            MechanismKind::SpectralDp { rho: 0.25 }
        );
        assert!("spectral-dp:0".parse::<MechanismKind>().is_err());
        assert!("spectral-dp:1.5".parse::<MechanismKind>().is_err());
        assert!("laplace".parse::<MechanismKind>().is_err());
        for m in [MechanismKind::Dpsgd, MechanismKind::Gredp, MechanismKind::SpectralDp { rho: 0.5 }] {
            assert_eq!(m.label().parse::<MechanismKind>().unwrap(), m);
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&[3.0, 4.0], 10.0).unwrap(), vec![3.0, 4.0]);
        let out = clip(&[3.0, 4.0], 1.0).unwrap();
        assert!(max_abs_diff(&out, &[0.6, 0.8]) < 1e-15);
        assert!(clip(&[1.0], 0.0).is_err());
        assert!(clip(&[1.0], -2.0).is_err());
    }

    #[test]
    fn clip_complex_to_exact_bound() {
        let mut r = rng(11);
        let g: Vec<Complex64> = (0..64)
            .map(|_| Complex64::new(r.standard_normal(), r.standard_normal()))
            .collect();
        assert!(l2_norm(&g) > 0.5);
        let out = clip(&g, 0.5).unwrap();
        // recomputed independently of l2_norm
        let norm = out.iter().map(|z| z.re * z.re + z.im * z.im).sum::<f64>().sqrt();
        assert!((norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_noise_is_zero() {
        let spec = NoiseSpec::new(1.0, 0.0).unwrap();
        let v = sample_complex_noise(16, &spec, &mut rng(0)).unwrap();
        assert!(v.iter().all(|z| z.norm() == 0.0));
        assert!(sample_complex_noise(0, &spec, &mut rng(0)).is_err());
    }

    #[test]
    fn fre_without_noise_preserves_gradient() {
        let spec = NoiseSpec::new(100.0, 0.0).unwrap();
        let out = fre(&[1.0, 2.0, 3.0, 4.0], &spec, &mut rng(0)).unwrap();
        assert!(max_abs_diff(&out, &[1.0, 2.0, 3.0, 4.0]) < 1e-9);

        let spec = NoiseSpec::new(1.0, 0.0).unwrap();
        let out = fre(&[0.6, 0.8], &spec, &mut rng(0)).unwrap();
        assert!(max_abs_diff(&out, &[0.6, 0.8]) < 1e-12);
    }

    #[test]
    fn fre_clips_in_frequency_domain() {
        let spec = NoiseSpec::new(1.0, 0.0).unwrap();
        let out = fre(&[3.0, 4.0], &spec, &mut rng(0)).unwrap();
        assert!(max_abs_diff(&out, &[0.6, 0.8]) < 1e-12);
    }

    #[test]
    fn dpsgd_examples() {
        let spec = NoiseSpec::new(1.0, 0.0).unwrap();
        let out = dpsgd_perturb(&[3.0, 4.0], &spec, &mut rng(0)).unwrap();
        assert!(max_abs_diff(&out, &[0.6, 0.8]) < 1e-15);
        let out = dpsgd_perturb(&[0.1, -0.2], &spec, &mut rng(0)).unwrap();
        assert_eq!(out, vec![0.1, -0.2]);
    }

    #[test]
    fn spectraldp_examples() {
        let spec = NoiseSpec::new(100.0, 0.0).unwrap();
        let g = [1.0, 2.0, 3.0, 4.0];
        let full = spectraldp_perturb(&g, &spec, 1.0, &mut rng(0)).unwrap();
        assert!(max_abs_diff(&full, &g) < 1e-9);
        let half = spectraldp_perturb(&g, &spec, 0.5, &mut rng(0)).unwrap();
        assert!(max_abs_diff(&half, &g) > 0.1);
        assert!(spectraldp_perturb(&g, &spec, 0.0, &mut rng(0)).is_err());
        assert!(spectraldp_perturb(&g, &spec, 1.01, &mut rng(0)).is_err());
    }

    #[test]
    fn spectraldp_full_ratio_is_gredp() {
        let spec = NoiseSpec::new(0.7, 0.0).unwrap();
        let mut r = rng(5);
        let g: Vec<f64> = (0..37).map(|_| r.standard_normal()).collect();
        let a = fre(&g, &spec, &mut rng(1)).unwrap();
        let b = spectraldp_perturb(&g, &spec, 1.0, &mut rng(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retained_counts() {
        assert_eq!(retained_coefficients(8, 0.5), 4);
        assert_eq!(retained_coefficients(10, 0.3), 3);
        assert_eq!(retained_coefficients(7, 0.5), 4);
        assert_eq!(retained_coefficients(5, 1.0), 5);
        assert_eq!(retained_coefficients(5, 1e-6), 1);
    }

    #[test]
    fn fre2d_small_cases() {
        let spec = NoiseSpec::new(1.0, 0.0).unwrap();
        let z = RealMat::zeros(4, 4);
        assert_eq!(fre2d(&z, &spec, &mut rng(0)).unwrap(), z);

        let mut r = rng(9);
        let data: Vec<f64> = (0..16).map(|_| r.uniform(-0.2, 0.2)).collect();
        let g = RealMat::from_vec(4, 4, data).unwrap();
        assert!(l2_norm(g.as_slice()) <= 1.0);
        let out = fre2d(&g, &spec, &mut rng(0)).unwrap();
        assert!(max_abs_diff(out.as_slice(), g.as_slice()) < 1e-9);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let spec = NoiseSpec::new(1.0, 1.0).unwrap();
        for mech in [MechanismKind::Dpsgd, MechanismKind::Gredp, MechanismKind::SpectralDp { rho: 0.5 }] {
            assert!(matches!(
                perturb(&[0.0, f64::NAN], &spec, mech, &mut rng(0)),
                Err(Error::NonFinite { index: 1 })
            ));
            assert!(perturb(&[], &spec, mech, &mut rng(0)).is_err());
        }
    }

    /// Closed form for the variance of coordinate `j` of `Re(F^-1(tau))`:
    /// `c^2 sigma^2 / N * (a^2 sum_k cos^2 + b^2 sum_k sin^2)`.
    fn coordinate_variance(n: usize, j: usize, a: f64, b: f64) -> f64 {
        let (mut cs, mut sn) = (0.0, 0.0);
        for k in 0..n {
            let ang = 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            cs += ang.cos().powi(2);
            sn += ang.sin().powi(2);
        }
        (a * a * cs + b * b * sn) / n as f64
    }

    #[test]
    fn uneven_splits_skew_the_self_conjugate_coordinates() {
        // Away from j = 0 and j = N/2 every coordinate has variance 1/2 for any
        // split; at those two the sine terms vanish and the variance is a^2.
        let n = 8;
        for (a, b) in [(1.0, 0.0), (0.6, 0.8)] {
            for j in 0..n {
                let v = coordinate_variance(n, j, a, b);
                let expected = if j == 0 || j == n / 2 { a * a } else { 0.5 };
                assert!((v - expected).abs() < 1e-12, "j={j} v={v}");
            }
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for j in 0..n {
            assert!((coordinate_variance(n, j, h, h) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn determinism_across_mechanisms() {
        let spec = NoiseSpec::new(1.0, 1.3).unwrap();
        let g = [0.3, -0.1, 0.25, 0.9, -0.4];
        for mech in [MechanismKind::Dpsgd, MechanismKind::Gredp, MechanismKind::SpectralDp { rho: 0.6 }] {
            let state = RngState { seed: 42, stream: 7 };
            let a = perturb(&g, &spec, mech, &mut state.rng()).unwrap();
            let b = perturb(&g, &spec, mech, &mut state.rng()).unwrap();
            assert_eq!(a, b);
            let c = perturb(&g, &spec, mech, &mut state.derive(1).rng()).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn plan_normalization_is_respected() {
        let spec = NoiseSpec::new(10.0, 0.0).unwrap();
        let plan = FftPlan::with_normalization(4, Normalization::Backward).unwrap();
        let out = fre_with_plan(&[1.0, 2.0, 3.0, 4.0], &spec, &mut rng(0), &plan).unwrap();
        // the unscaled forward inflates the norm past the clip bound
        assert!(max_abs_diff(&out, &[1.0, 2.0, 3.0, 4.0]) > 0.1);
    }

    proptest! {
        #[test]
        fn clip_bounds_and_idempotence(v in prop::collection::vec(-10.0f64..10.0, 1..64), c in 0.01f64..5.0) {
            let once = clip(&v, c).unwrap();
            prop_assert!(l2_norm(&once) <= c + 1e-12);
            let twice = clip(&once, c).unwrap();
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            // direction preserved
            let dot: f64 = v.iter().zip(&once).map(|(a, b)| a * b).sum();
            prop_assert!(dot >= 0.0);
        }

        #[test]
        fn gradient_preservation(v in prop::collection::vec(-1.0f64..1.0, 1..128)) {
            let c = l2_norm(&v).max(1e-6) * 1.5;
            let spec = NoiseSpec::new(c, 0.0).unwrap();
            let out = fre(&v, &spec, &mut rng(0)).unwrap();
            for (x, y) in out.iter().zip(&v) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

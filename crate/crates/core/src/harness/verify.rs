//! Monte-Carlo checks of the variance claims behind the spectral mechanisms.
//!
//! Every check feeds an all-zero gradient through a pipeline, pools the
//! output coordinates and compares their variance with the closed form.

use std::fmt;

use crate::error::{invalid, Result};
use crate::mechanisms::{
    dpsgd_perturb, fre2d_with_plan, fre_with_plan, spectraldp_with_plan, NoiseRng, NoiseSpec, RngState, Split,
};
use crate::spectral::{Fft2dPlan, FftPlan, Normalization, RealMat};

/// Vector length for the 1D checks. The coordinates `0` and `N/2` of a
/// real-part output have variance `a^2 c^2 sigma^2` rather than
/// `c^2 sigma^2 / 2`, so a long vector keeps the pooled bias from unequal
/// splits at `(a^2 - b^2) / N`, about 0.1%.
pub const VECTOR_LEN: usize = 1024;
/// Side of the square matrices in the 2D check.
pub const MATRIX_SIDE: usize = 8;
/// Fewest pooled draws [`verify_theorems`] accepts.
pub const MIN_TRIALS: usize = 100_000;

/// One line of a [`VerifyReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub target: f64,
    pub empirical: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `|empirical / target - 1| <= tolerance`.
    pub fn relative(name: impl Into<String>, target: f64, empirical: f64, tolerance: f64) -> Self {
        let pass = ((empirical / target) - 1.0).abs() <= tolerance;
        Self {
            name: name.into(),
            target,
            empirical,
            tolerance,
            pass,
        }
    }
}

struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 != 0.0 && self.0.abs() < 1e-3 {
            write!(f, "{:.3e}", self.0)
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} target={} empirical={} tol={} {}",
            self.name,
            Num(self.target),
            Num(self.empirical),
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Default, Clone, Copy)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn extend(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.push(x));
    }

    pub fn count(&self) -> u64 {
        self.n as u64
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.m2 / (self.n - 1.0).max(1.0)
    }
}

fn rounds(draws: usize, len: usize) -> usize {
    draws.div_ceil(len).max(1)
}

/// Pooled output variance of the 1D spectral pipeline on zero input, at
/// `ceil(draws / n)` vectors of length `n`.
pub fn spectral_variance(n: usize, noise: &NoiseSpec, rho: Option<f64>, draws: usize, norm: Normalization, rng: &mut NoiseRng) -> Result<f64> {
    let plan = FftPlan::with_normalization(n, norm)?;
    let zero = vec![0.0; n];
    let mut m = Moments::default();
    for _ in 0..rounds(draws, n) {
        let out = match rho {
            None => fre_with_plan(&zero, noise, rng, &plan)?,
            Some(rho) => spectraldp_with_plan(&zero, noise, rho, rng, &plan)?,
        };
        m.extend(&out);
    }
    Ok(m.variance())
}

/// Pooled output variance of the time-domain DPSGD perturbation on zero input.
pub fn dpsgd_variance(n: usize, noise: &NoiseSpec, draws: usize, rng: &mut NoiseRng) -> Result<f64> {
    let zero = vec![0.0; n];
    let mut m = Moments::default();
    for _ in 0..rounds(draws, n) {
        m.extend(&dpsgd_perturb(&zero, noise, rng)?);
    }
    Ok(m.variance())
}

/// Pooled output variance of the 2D pipeline over `matrices` zero inputs.
pub fn spectral_variance_2d(side: usize, noise: &NoiseSpec, matrices: usize, norm: Normalization, rng: &mut NoiseRng) -> Result<f64> {
    let plan = Fft2dPlan::with_normalization(side, side, norm)?;
    let zero = RealMat::zeros(side, side);
    let mut m = Moments::default();
    for _ in 0..matrices.max(1) {
        m.extend(fre2d_with_plan(&zero, noise, rng, &plan)?.as_slice());
    }
    Ok(m.variance())
}

/// Runs every check with `c = sigma = 1`; see [`verify_theorems_with`].
pub fn verify_theorems(trials: usize, tolerance: f64, seed: u64) -> Result<VerifyReport> {
    verify_theorems_with(trials, tolerance, seed, Normalization::Unitary)
}

/// The full campaign, each check pooling about `trials` output draws:
///
/// - real-part output variance is half the input noise variance;
/// - the DPSGD reference keeps the full variance, and the ratio is one half;
/// - the half holds for any split `a^2 + b^2 = 1` of noise between the real
///   and imaginary parts;
/// - the 2D pipeline behaves like the 1D one;
/// - masking to half the coefficients halves the variance again.
///
/// `norm` is a test hook: anything but [`Normalization::Unitary`] breaks
/// the transform's isometry and the checks are expected to fail.
pub fn verify_theorems_with(trials: usize, tolerance: f64, seed: u64, norm: Normalization) -> Result<VerifyReport> {
    if trials < MIN_TRIALS {
        return Err(invalid(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if !(tolerance > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tolerance}")));
    }
    let base = RngState::new(seed);
    let noise = NoiseSpec::new(1.0, 1.0)?;
    let n = VECTOR_LEN;
    let mut checks = Vec::new();

    let g = spectral_variance(n, &noise, None, trials, norm, &mut base.derive(1).rng())?;
    let d = dpsgd_variance(n, &noise, trials, &mut base.derive(2).rng())?;
    checks.push(Check::relative("gredp_variance", 0.5, g, tolerance));
    checks.push(Check::relative("dpsgd_variance", 1.0, d, tolerance));
    checks.push(Check::relative("variance_ratio", 0.5, g / d, tolerance));

    let r = std::f64::consts::FRAC_1_SQRT_2;
    for (i, (a, b)) in [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8), (r, r)].into_iter().enumerate() {
        let spec = NoiseSpec::with_split(1.0, 1.0, Split::new(a, b)?)?;
        let v = spectral_variance(n, &spec, None, trials, norm, &mut base.derive(10 + i as u64).rng())?;
        checks.push(Check::relative(format!("split_a{a:.3}_b{b:.3}_variance"), 0.5, v, tolerance));
    }

    let side = MATRIX_SIDE;
    let v2 = spectral_variance_2d(side, &noise, rounds(trials, side * side), norm, &mut base.derive(20).rng())?;
    checks.push(Check::relative("gredp_2d_variance", 0.5, v2, tolerance));

    let vs = spectral_variance(n, &noise, Some(0.5), trials, norm, &mut base.derive(30).rng())?;
    checks.push(Check::relative("spectraldp_rho0.5_variance", 0.25, vs, tolerance));

    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, -2.0, 0.5, 3.0];
        let mut m = Moments::default();
        m.extend(&xs);
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean() - mean).abs() < 1e-12 && (m.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn report_line_format() {
        let c = Check::relative("x", 0.5, 0.505, 0.02);
        assert_eq!(c.to_string(), "x target=0.500000 empirical=0.505000 tol=0.02 PASS");
        assert!(!Check::relative("y", 0.5, 0.6, 0.02).pass);
    }

    #[test]
    fn rejects_small_campaigns() {
        assert!(verify_theorems(10, 0.02, 0).is_err());
        assert!(verify_theorems(MIN_TRIALS, 0.0, 0).is_err());
    }
}

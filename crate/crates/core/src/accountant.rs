//! Gaussian-mechanism calibration and Renyi-DP composition.

use crate::error::{invalid, Error, Result};

/// `(epsilon, delta)` with the Renyi order used to obtain it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    alpha: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, alpha: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        check_delta(delta)?;
        check_alpha(alpha)?;
        Ok(Self { epsilon, delta, alpha })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Repeated application of one mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionPlan {
    pub steps: u64,
    pub per_step_epsilon: f64,
}

impl CompositionPlan {
    /// `epochs * dataset_size / batch_size` steps, rounded down.
    pub fn for_training(epochs: usize, dataset_size: usize, batch_size: usize, per_step_epsilon: f64) -> Result<Self> {
        if batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        let steps = (epochs * (dataset_size / batch_size)) as u64;
        if steps == 0 {
            return Err(invalid("composition needs at least one step"));
        }
        Ok(Self { steps, per_step_epsilon })
    }

    pub fn total(&self, alpha: f64, delta: f64) -> Result<PrivacyBudget> {
        compose_training(self.per_step_epsilon, self.steps, alpha, delta)
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("epsilon must be positive and finite, got {eps}")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("Renyi order must exceed 1, got {alpha}")))
    }
}

/// Noise multiplier for a single `(epsilon, delta)` Gaussian release:
/// `sqrt(2 ln(1.25 / delta)) / epsilon`.
pub fn calibrate_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_delta(delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Inverse of [`calibrate_sigma`].
pub fn epsilon_for_sigma(sigma: f64, delta: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_delta(delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / sigma)
}

/// `(alpha, eps)`-RDP implies `(eps + ln(1/delta) / (alpha - 1), delta)`-DP.
pub fn rdp_to_dp(alpha: f64, rdp_epsilon: f64, delta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_delta(delta)?;
    if !(rdp_epsilon >= 0.0) {
        return Err(invalid(format!("RDP epsilon must be nonnegative, got {rdp_epsilon}")));
    }
    Ok(rdp_epsilon + (1.0 / delta).ln() / (alpha - 1.0))
}

/// Linear RDP composition over `steps` releases followed by a single
/// conversion: `(steps * eps + ln(1/delta) / (alpha - 1), delta)`.
pub fn compose_training(per_step_epsilon: f64, steps: u64, alpha: f64, delta: f64) -> Result<PrivacyBudget> {
    if steps == 0 {
        return Err(invalid("composition needs at least one step"));
    }
    check_epsilon(per_step_epsilon)?;
    let total = rdp_to_dp(alpha, steps as f64 * per_step_epsilon, delta)?;
    PrivacyBudget::new(total, delta, alpha)
}

/// Noise multiplier for the training loop when each step is charged
/// `per_step_epsilon` of RDP at order `alpha`: the single-release calibration
/// evaluated at `eps' = per_step_epsilon + ln(1/delta) / (alpha - 1)`.
pub fn training_sigma(per_step_epsilon: f64, delta: f64, alpha: f64) -> Result<f64> {
    let converted = rdp_to_dp(alpha, per_step_epsilon, delta)?;
    calibrate_sigma(converted, delta)
}

/// Renyi orders searched by [`spent_epsilon`]: 1.5, then 2 through 64.
pub fn default_alpha_grid() -> Vec<f64> {
    std::iter::once(1.5).chain((2..=64).map(f64::from)).collect()
}

/// RDP of one Gaussian release with noise multiplier `sigma` at order `alpha`.
pub fn gaussian_rdp(alpha: f64, sigma: f64) -> f64 {
    alpha / (2.0 * sigma * sigma)
}

/// `(epsilon, delta)` spent after `steps` Gaussian releases at noise
/// multiplier `sigma`, minimized over `alphas`.
///
/// Zero steps cost nothing. `sigma == 0` gives infinity. No subsampling
/// amplification is applied.
pub fn spent_epsilon(sigma: f64, steps: u64, delta: f64, alphas: &[f64]) -> Result<f64> {
    if alphas.is_empty() {
        return Err(Error::Empty("alpha grid"));
    }
    check_delta(delta)?;
    if steps == 0 {
        return Ok(0.0);
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    alphas
        .iter()
        .map(|&a| rdp_to_dp(a, steps as f64 * gaussian_rdp(a, sigma), delta))
        .try_fold(f64::INFINITY, |best, eps| Ok(best.min(eps?)))
}

//! Noise calibration and the epsilon spent by a training run.

use gredp::accountant::{calibrate_sigma, default_alpha_grid, epsilon_for_sigma, spent_epsilon};

fn main() -> gredp::Result<()> {
    let delta = 1e-5;
    for eps in [0.5, 1.0, 1.5, 2.0] {
        let sigma = calibrate_sigma(eps, delta)?;
        println!("epsilon {eps:<4} -> sigma {sigma:.4} (inverse {:.4})", epsilon_for_sigma(sigma, delta)?);
    }
    let sigma = calibrate_sigma(1.0, delta)?;
    for steps in [1, 8, 40, 200] {
        println!("{steps:>4} steps at sigma {sigma:.3}: epsilon {:.3}", spent_epsilon(sigma, steps, delta, &default_alpha_grid())?);
    }
    Ok(())
}

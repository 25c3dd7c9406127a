//! The three perturbations side by side on one gradient, plus their
//! empirical output variance on a zero gradient.

use gredp::harness::verify::{dpsgd_variance, spectral_variance};
use gredp::mechanisms::{perturb, MechanismKind, NoiseSpec, RngState};
use gredp::spectral::Normalization;

fn main() -> gredp::Result<()> {
    let g: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).cos()).collect();
    let spec = NoiseSpec::new(1.0, 1.0)?;
    let mechs = [MechanismKind::Dpsgd, MechanismKind::Gredp, MechanismKind::spectral_dp(0.5)?];
    for (i, m) in mechs.iter().enumerate() {
        let out = perturb(&g, &spec, *m, &mut RngState::new(7).derive(i as u64).rng())?;
        println!("{m:>16}: {:?}", out.iter().take(4).map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
    }

    let draws = 200_000;
    let mut rng = RngState::new(1).rng();
    let d = dpsgd_variance(256, &spec, draws, &mut rng)?;
    let f = spectral_variance(256, &spec, None, draws, Normalization::Unitary, &mut rng)?;
    let s = spectral_variance(256, &spec, Some(0.5), draws, Normalization::Unitary, &mut rng)?;
    println!("output variance  dpsgd {d:.4}  gredp {f:.4}  spectral-dp(0.5) {s:.4}");
    Ok(())
}

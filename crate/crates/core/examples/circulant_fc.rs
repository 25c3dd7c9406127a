//! Block-circulant fully connected layer against its dense materialization.

use gredp::layers::{circfc_forward, circfc_weight_grad_spectral, CirculantFcSpec};
use gredp::mechanisms::{MechanismKind, NoiseSpec, RngState};

fn main() -> gredp::Result<()> {
    let spec = CirculantFcSpec::new(8, 12, 4)?;
    let mut rng = RngState::new(5).rng();
    let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let d = spec.block;
    let cols = spec.inputs / d;
    let dense = |r: usize, c: usize| {
        let (bi, bj) = (r / d, c / d);
        let first_row = &w[(bi * cols + bj) * d..][..d];
        first_row[(c % d + d - r % d) % d]
    };
    let fast = circfc_forward(&x, &w, &spec)?;
    let err = (0..8)
        .map(|r| ((0..12).map(|c| dense(r, c) * x[c]).sum::<f64>() - fast[r]).abs())
        .fold(0.0, f64::max);
    println!("{} parameters instead of {}; forward max error {err:.2e}", spec.weight_len(), 8 * 12);

    let up = vec![1.0; 8];
    let g = circfc_weight_grad_spectral(&up, &x, &spec, &NoiseSpec::new(1.0, 0.0)?, MechanismKind::Gredp, &mut rng)?;
    println!("clipped block gradients (sigma 0): {} blocks, first {:.3?}", g.len(), g[0]);
    Ok(())
}

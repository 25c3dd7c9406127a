//! Unitary DFT: round trip, Parseval, and the real-input symmetry.

use gredp::spectral::{fft1d, fft2d, ifft1d, ifft2d, ComplexMat, RealMat};
use num_complex::Complex64;

fn main() -> gredp::Result<()> {
    let x: Vec<Complex64> = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5].iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let spec = fft1d(&x)?;
    let back = ifft1d(&spec)?;
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let energy = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    println!("n=6 (direct path) round-trip error {err:.2e}");
    println!("time energy {:.6}, frequency energy {:.6}", energy(&x), energy(&spec));
    println!("X[1] = {:.4}, conj X[5] = {:.4}", spec[1], spec[5].conj());

    let m = RealMat::from_vec(4, 4, (0..16).map(|i| (i as f64).sin()).collect())?;
    let f = fft2d(&ComplexMat::from_real(&m))?;
    let r = ifft2d(&f)?.real_part();
    let err2 = m.as_slice().iter().zip(r.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("4x4 (radix-2 path) round-trip error {err2:.2e}");
    Ok(())
}

//! Convolution weight gradient computed through the 2D transform, checked
//! against the direct loop, then privatized per kernel.

use gredp::layers::{conv2d_weight_grad_spectral, Conv2d, ConvLayerSpec, Tensor};
use gredp::mechanisms::{MechanismKind, NoiseSpec, RngState};

fn main() -> gredp::Result<()> {
    let spec = ConvLayerSpec::new(2, 3, 3, 8, 8)?;
    let mut rng = RngState::new(3).rng();
    let layer = Conv2d::init(spec, &mut rng)?;
    let x = Tensor::from_vec(2, 8, 8, (0..128).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let up = Tensor::from_vec(3, 6, 6, (0..108).map(|_| rng.uniform(-1.0, 1.0)).collect())?;

    let fast = layer.weight_grad(&up, &x)?;
    let mut slow = vec![0.0; spec.weight_len()];
    for o in 0..3 {
        for i in 0..2 {
            for u in 0..3 {
                for v in 0..3 {
                    let mut s = 0.0;
                    for r in 0..6 {
                        for c in 0..6 {
                            s += up.at(o, r, c) * x.at(i, r + u, c + v);
                        }
                    }
                    slow[((o * 2 + i) * 3 + u) * 3 + v] = s;
                }
            }
        }
    }
    let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("spectral vs direct weight gradient: max error {err:.2e}");

    let noise = NoiseSpec::new(1.0, 0.5)?;
    let private = conv2d_weight_grad_spectral(&up, &x, &spec, &noise, MechanismKind::Gredp, &mut RngState::new(4).rng())?;
    println!("{} private 3x3 kernels; first row of kernel 0: {:.3?}", private.len(), &private[0].as_slice()[..3]);
    Ok(())
}

//! Differentiable layers whose weight gradients are formed in the frequency domain.
//!
//! [`Conv2d`] and [`CirculantFc`] expose their per-sample weight gradient as a
//! spectrum so a mechanism can perturb it before the inverse transform.
//! Everything else (activations, pooling, the loss) is ordinary time-domain code.

mod activation;
mod circulant;
mod conv;
mod loss;
mod tensor;

pub use activation::{avg_pool2d, avg_pool2d_backward, max_pool2d, max_pool2d_backward, relu, relu_backward};
pub use circulant::{circfc_forward, circfc_weight_grad_spectral, CirculantFc, CirculantFcSpec};
pub use conv::{conv2d_forward, conv2d_weight_grad_spectral, Conv2d, ConvLayerSpec};
pub use loss::{cross_entropy_loss, softmax};
pub use tensor::Tensor;

/// Uniform initialisation bound `1 / sqrt(fan_in)`.
pub(crate) fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

//! Differentially private training with noise injected into the frequency
//! domain of per-sample gradients.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral`]: unitary 1D/2D discrete Fourier transforms.
//! - [`mechanisms`]: clipping, Gaussian noise and the GReDP, DPSGD and
//!   Spectral-DP gradient perturbations.
//! - [`layers`]: convolution and block-circulant layers whose weight
//!   gradients are formed as spectra.
//! - [`accountant`]: noise calibration and Renyi-DP composition.
//! - [`model`] and [`training`]: small CNN/MLP presets and the private SGD loop.
//! - [`harness`]: data loading, experiment sweeps and statistical checks.

pub mod accountant;
pub mod error;
pub mod harness;
pub mod layers;
pub mod mechanisms;
pub mod model;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};

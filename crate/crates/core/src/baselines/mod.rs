//! Contrast forecasters: an independent explicit-Gaussian head with a
//! constant-noise sampler, and a social autoregressive decoder.

pub mod autoregressive;
pub mod explicit;
pub mod independent;

pub use autoregressive::{noisy_conditioning, AutoregressiveModel, Rollout};
pub use explicit::{constant_noise_trajectory, decode_gaussians, gaussian_nll, GaussianWaypoint};
pub use independent::IndependentHead;

//! Minimal reverse-mode differentiation core: tensors, the recording
//! graph, layers, Gaussian utilities, Adam, gradient checking and
//! checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{
    kl_diag_gaussian, kl_value, reparam_sample, reparam_with_noise, DiagGaussian, GaussianVars,
};
pub use graph::{huber, sigmoid, softplus, Gradients, Graph, Var};
pub use nn::{Activation, GruCell, Mlp};
pub use params::ParamStore;
pub use tensor::Tensor;

//! Scene-consistent multi-agent motion forecasting.
//!
//! The crate bundles a small reverse-mode differentiation core, the
//! graph-structured implicit latent variable model and its contrast
//! baselines, a synthetic interacting-traffic generator, scene-level sample
//! metrics and a Monte-Carlo expected-cost planner.

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod samples;
pub mod scene;
pub mod scenegen;
pub mod sim;

pub use error::{Error, Result};

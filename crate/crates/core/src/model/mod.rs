//! Forecasting models: the implicit latent variable model, shared actor
//! feature encoder, batching and the training loop.

mod any;
mod batch;
mod checks;
mod config;
mod ilvm;
mod train;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::samples::SceneSampleSet;
use crate::scene::Scene;

pub use any::AnyModel;
pub(crate) use batch::{select_rows, weighted_rows};
pub use batch::{ActorEncoder, SceneBatch};
pub use checks::{component_names, component_suite};
pub use config::{Ablation, BetaSchedule, ModelConfig, ModelKind, ReconReduction};
pub use ilvm::{Decoder, Ilvm, LatentHead};
pub use train::{train, train_from, TrainConfig, TrainOutcome, TrainRecord};

/// Loss components of one step, averaged over the scenes of the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

/// Interface shared by every trainable forecaster.
pub trait Forecaster {
    fn kind(&self) -> ModelKind;

    fn config(&self) -> &ModelConfig;

    /// Fresh parameters drawn from `seed`.
    fn init_params(&self, seed: u64) -> Result<ParamStore>;

    /// Training objective for a batch; `step` drives any schedule.
    fn loss(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        step: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossParts)>;

    /// `num_samples` joint futures for one scene.
    fn sample(
        &self,
        store: &ParamStore,
        scene: &Scene,
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneSampleSet>;
}

use rand_chacha::ChaCha8Rng;

use super::config::{Ablation, ModelConfig, ModelKind};
use super::{Forecaster, Ilvm, LossParts, SceneBatch};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::baselines::{AutoregressiveModel, IndependentHead};
use crate::error::Result;
use crate::samples::SceneSampleSet;
use crate::scene::Scene;

/// Any forecaster selected by [`ModelKind`].
#[derive(Clone, Debug)]
pub enum AnyModel {
    Ilvm(Ilvm),
    Independent(IndependentHead),
    Autoregressive(AutoregressiveModel),
}

impl AnyModel {
    /// Builds the model; for ILVM kinds the ablation flags of `config` are
    /// replaced by those of the named variant.
    pub fn build(kind: ModelKind, mut config: ModelConfig) -> Result<Self> {
        Ok(match kind {
            ModelKind::Ilvm(k) => {
                config.ablation = Ablation::variant(k)?;
                AnyModel::Ilvm(Ilvm::new(config)?)
            }
            ModelKind::Independent => AnyModel::Independent(IndependentHead::new(config)?),
            ModelKind::Autoregressive => {
                AnyModel::Autoregressive(AutoregressiveModel::new(config)?)
            }
        })
    }

    pub fn as_forecaster(&self) -> &dyn Forecaster {
        match self {
            AnyModel::Ilvm(m) => m,
            AnyModel::Independent(m) => m,
            AnyModel::Autoregressive(m) => m,
        }
    }
}

impl Forecaster for AnyModel {
    fn kind(&self) -> ModelKind {
        self.as_forecaster().kind()
    }

    fn config(&self) -> &ModelConfig {
        self.as_forecaster().config()
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.as_forecaster().init_params(seed)
    }

    fn loss(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        step: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossParts)> {
        self.as_forecaster().loss(g, batch, step, rng)
    }

    fn sample(
        &self,
        store: &ParamStore,
        scene: &Scene,
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneSampleSet> {
        self.as_forecaster().sample(store, scene, num_samples, rng)
    }
}

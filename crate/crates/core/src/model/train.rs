use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::SceneBatch;
use super::Forecaster;
use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore};
use crate::error::{invalid, Error, Result};
use crate::scene::Scene;
use crate::scenegen::mix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            adam: AdamConfig::default(),
            clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub curve: Vec<TrainRecord>,
}

/// Trains from freshly initialized parameters.
pub fn train<M: Forecaster + ?Sized>(
    model: &M,
    scenes: &[Scene],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let store = model.init_params(cfg.seed)?;
    train_from(model, store, scenes, cfg)
}

/// Minibatch Adam over `scenes`, reshuffled every epoch. Deterministic
/// given `cfg.seed`. A non-finite loss or gradient aborts with
/// [`Error::Diverged`].
pub fn train_from<M: Forecaster + ?Sized>(
    model: &M,
    mut store: ParamStore,
    scenes: &[Scene],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(invalid("training needs at least one scene"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch_size must be positive"));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ 0x0DDB_A7C4));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ 0x2A01_5E11));
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(scenes.len()) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picked.push(&scenes[order[cursor]]);
            cursor += 1;
        }
        let batch = SceneBatch::new(&picked, model.config())?;
        let (mut grads, parts) = {
            let mut g = Graph::with_params(&store);
            let (loss, parts) = model
                .loss(&mut g, &batch, step, &mut noise_rng)
                .map_err(|e| diverged(step, e))?;
            (g.backward(loss)?, parts)
        };
        let norm = grads.norm();
        if !norm.is_finite() || !parts.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {} gradient norm {norm}", parts.total),
            });
        }
        if let Some(c) = cfg.clip_norm {
            if norm > c {
                grads.scale(c / norm);
            }
        }
        adam.step(&mut store, &grads)?;
        curve.push(TrainRecord {
            step,
            recon: parts.recon,
            kl: parts.kl,
            beta: parts.beta,
            total: parts.total,
            grad_norm: norm,
        });
    }
    Ok(TrainOutcome { store, curve })
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

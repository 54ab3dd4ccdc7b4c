//! Experiment configuration: one JSON document, overridable from flags.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set`
//! assignments in command-line order, then dedicated flags such as
//! `--seed` or `--steps`.

use std::path::{Path, PathBuf};

use ilvm_core::autodiff::checkpoint::config_hash;
use ilvm_core::dataset::{DatasetManifest, Split};
use ilvm_core::metrics::MetricOptions;
use ilvm_core::model::{ModelConfig, ModelKind, TrainConfig};
use ilvm_core::planner::{CostWeights, LatticeSpec, DEFAULT_PLAN_SAMPLES};
use ilvm_core::scene::ScenarioKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{usage, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; relative paths resolve against the output dir.
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            manifest: DatasetManifest::new(
                0,
                &[
                    (ScenarioKind::CarFollow, 200),
                    (ScenarioKind::YieldGo, 200),
                    (ScenarioKind::TurnBranch, 200),
                ],
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples per scene.
    pub samples: usize,
    pub split: Split,
    /// Evaluate only the first `limit` scenes of the split.
    pub limit: Option<usize>,
    pub metrics: MetricOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 15,
            split: Split::Test,
            limit: None,
            metrics: MetricOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub samples: usize,
    /// Index of the self-driving actor within the scene.
    pub sdv: usize,
    /// Horizon and time step are taken from the scene.
    pub lattice: LatticeSpec,
    pub weights: CostWeights,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_PLAN_SAMPLES,
            sdv: 0,
            lattice: LatticeSpec::default(),
            weights: CostWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed: training, sampling and planning derive from it.
    pub seed: u64,
    pub model: ModelKind,
    pub model_config: ModelConfig,
    pub data: DataConfig,
    /// `train.seed` is ignored in favor of the top-level seed.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub plan: PlanConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::Ilvm(0),
            model_config: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            plan: PlanConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config always serializes")
    }

    /// Applies `key.path=value` assignments; values parse as JSON and fall
    /// back to plain strings.
    pub fn with_assignments(self, sets: &[String]) -> CliResult<Self> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut v = self.to_value();
        for s in sets {
            let (path, raw) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got `{s}`")))?;
            let new: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut v;
            for key in path.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(key))
                    .ok_or_else(|| usage(format!("--set: unknown key `{path}`")))?;
            }
            *slot = new;
        }
        Self::from_value(v)
    }

    pub fn validate(&self) -> CliResult<()> {
        let check = |r: ilvm_core::Result<()>| r.map_err(|e| usage(format!("config: {e}")));
        check(self.model_config.validate())?;
        check(self.data.manifest.validate())?;
        check(self.plan.weights.validate())?;
        let g = &self.data.manifest.generator;
        if g.horizon != self.model_config.horizon || g.history != self.model_config.history {
            return Err(usage(format!(
                "config: generator horizon/history {}/{} differ from model {}/{}",
                g.horizon, g.history, self.model_config.horizon, self.model_config.history
            )));
        }
        if self.train.batch_size == 0 || self.eval.samples == 0 || self.plan.samples == 0 {
            return Err(usage(
                "config: batch size and sample counts must be positive",
            ));
        }
        Ok(())
    }

    /// Digest of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        config_hash(&self.to_value())
    }

    pub fn data_dir(&self, out: &Path) -> PathBuf {
        out.join(&self.data.dir)
    }

    /// Training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

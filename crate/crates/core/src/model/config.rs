use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Structural switches of the ablation study. All `true` is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub learned_prior: bool,
    pub implicit_output: bool,
    pub sim_encoder: bool,
    pub sim_decoder: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::variant(0).unwrap()
    }
}

impl Ablation {
    /// Named variants `M0` to `M5`.
    pub fn variant(k: u8) -> Result<Self> {
        let full = Self {
            learned_prior: true,
            implicit_output: true,
            sim_encoder: true,
            sim_decoder: true,
        };
        Ok(match k {
            0 => full,
            1 => Self {
                implicit_output: false,
                ..full
            },
            2 => Self {
                learned_prior: false,
                ..full
            },
            3 => Self {
                sim_encoder: false,
                ..full
            },
            4 => Self {
                sim_decoder: false,
                ..full
            },
            5 => Self {
                sim_encoder: false,
                sim_decoder: false,
                ..full
            },
            _ => return Err(invalid(format!("no ablation variant M{k}"))),
        })
    }

    pub fn index(&self) -> Option<u8> {
        (0..=5).find(|&k| Self::variant(k).ok().as_ref() == Some(self))
    }
}

/// Cyclic annealing of the KL weight: within each cycle of `cycle` steps
/// the weight ramps linearly from 0 to `beta_max` over the first half and
/// holds; from `warmup` on it stays at `beta_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_max: f64,
    pub cycle: usize,
    pub warmup: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta_max: 0.05,
            cycle: 500,
            warmup: 2000,
        }
    }
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self {
            beta_max: beta,
            cycle: 1,
            warmup: 0,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step >= self.warmup || self.cycle < 2 {
            return self.beta_max;
        }
        let half = self.cycle as f64 / 2.0;
        let pos = (step % self.cycle) as f64;
        if pos < half {
            self.beta_max * pos / half
        } else {
            self.beta_max
        }
    }
}

/// How per-coordinate reconstruction terms are combined within a scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconReduction {
    /// Sum over every actor, waypoint and coordinate.
    Sum,
    /// Sum over coordinates, mean over the `N * T` waypoints.
    #[default]
    WaypointMean,
}

impl ReconReduction {
    /// Multiplier applied to the summed term of a scene with `n` actors
    /// and horizon `t`.
    pub fn factor(self, n: usize, t: usize) -> f64 {
        match self {
            ReconReduction::Sum => 1.0,
            ReconReduction::WaypointMean => 1.0 / (n * t).max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub actor_feat_dim: usize,
    pub latent_dim: usize,
    pub horizon: usize,
    pub history: usize,
    pub hidden_dim: usize,
    pub ablation: Ablation,
    pub beta: BetaSchedule,
    pub huber_delta: f64,
    pub recon_reduction: ReconReduction,
    /// Trajectories enter and leave the networks divided by this (meters).
    pub traj_scale: f64,
    pub position_scale: f64,
    pub sim_rounds: usize,
    /// Floor added to the Cholesky diagonal of explicit Gaussian heads.
    pub sigma_floor: f64,
    /// Standard deviation of the conditioning noise of the autoregressive
    /// baseline during training (meters).
    pub noise_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            actor_feat_dim: 64,
            latent_dim: 8,
            horizon: 10,
            history: 6,
            hidden_dim: 64,
            ablation: Ablation::default(),
            beta: BetaSchedule::default(),
            huber_delta: 1.0,
            recon_reduction: ReconReduction::default(),
            traj_scale: 10.0,
            position_scale: 0.1,
            sim_rounds: 1,
            sigma_floor: 1e-4,
            noise_alpha: 0.2,
        }
    }
}

impl ModelConfig {
    /// Small widths for tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            actor_feat_dim: 6,
            latent_dim: 3,
            horizon: 4,
            history: 3,
            hidden_dim: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.actor_feat_dim,
            self.latent_dim,
            self.horizon,
            self.history,
            self.hidden_dim,
            self.sim_rounds,
        ];
        if dims.contains(&0) {
            return Err(invalid(format!("model dims must be positive: {self:?}")));
        }
        if !(self.huber_delta > 0.0) || !(self.traj_scale > 0.0) || !(self.sigma_floor > 0.0) {
            return Err(invalid(
                "huber_delta, traj_scale and sigma_floor must be positive",
            ));
        }
        if !(self.noise_alpha >= 0.0) || !(self.beta.beta_max >= 0.0) {
            return Err(invalid("noise_alpha and beta must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Implicit latent variable model with the given ablation variant
    /// (0 is the full model).
    Ilvm(u8),
    Independent,
    Autoregressive,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Ilvm(0) => write!(f, "ilvm"),
            ModelKind::Ilvm(k) => write!(f, "ilvm-m{k}"),
            ModelKind::Independent => write!(f, "independent"),
            ModelKind::Autoregressive => write!(f, "autoregressive"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "ilvm" | "ilvm-m0" => Ok(ModelKind::Ilvm(0)),
            "independent" => Ok(ModelKind::Independent),
            "autoregressive" => Ok(ModelKind::Autoregressive),
            _ => {
                let k = lower
                    .strip_prefix("ilvm-m")
                    .and_then(|d| d.parse::<u8>().ok())
                    .filter(|k| *k <= 5)
                    .ok_or_else(|| invalid(format!("unknown model kind `{s}`")))?;
                Ok(ModelKind::Ilvm(k))
            }
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

use std::ops::Range;

use rand::Rng;

use super::config::{ModelConfig, ReconReduction};
use crate::autodiff::{Activation, Graph, GruCell, Mlp, ParamStore, Tensor, Var};
use crate::error::{invalid, Result};
use crate::geometry::Pose2;
use crate::scene::Scene;
use crate::sim::InteractionGraph;

/// Several scenes packed into one block-structured actor graph. Node order
/// is scene-major, actors in scene order.
#[derive(Clone, Debug)]
pub struct SceneBatch {
    pub graph: InteractionGraph,
    pub ranges: Vec<Range<usize>>,
    pub actor_ids: Vec<u32>,
    /// One `[B x 2]` tensor per history step, oldest first, divided by
    /// `traj_scale`.
    pub past: Vec<Tensor>,
    /// `[B x 2T]` ground-truth futures in meters, when available.
    pub future: Option<Tensor>,
    pub traj_scale: f64,
}

impl SceneBatch {
    pub fn new(scenes: &[&Scene], config: &ModelConfig) -> Result<Self> {
        Self::build(scenes, config, true)
    }

    /// Batch without ground-truth futures (inference).
    pub fn inference(scenes: &[&Scene], config: &ModelConfig) -> Result<Self> {
        Self::build(scenes, config, false)
    }

    fn build(scenes: &[&Scene], config: &ModelConfig, with_future: bool) -> Result<Self> {
        if scenes.is_empty() {
            return Err(invalid("empty scene batch"));
        }
        let (h, t) = (config.history, config.horizon);
        let mut ranges = Vec::with_capacity(scenes.len());
        let mut actor_ids = Vec::new();
        let mut past = vec![Vec::new(); h];
        let mut future = Vec::new();
        for s in scenes {
            s.validate()?;
            if s.history() != h {
                return Err(invalid(format!(
                    "scene {}: history {} but model expects {h}",
                    s.id,
                    s.history()
                )));
            }
            if with_future && s.horizon() != t {
                return Err(invalid(format!(
                    "scene {}: horizon {} but model expects {t}",
                    s.id,
                    s.horizon()
                )));
            }
            let start = actor_ids.len();
            for a in &s.actors {
                actor_ids.push(a.id);
                for (k, p) in a.past.iter().enumerate() {
                    past[k].extend([p[0] / config.traj_scale, p[1] / config.traj_scale]);
                }
                if with_future {
                    future.extend(a.future.iter().flat_map(|p| [p[0], p[1]]));
                }
            }
            ranges.push(start..actor_ids.len());
        }
        let b = actor_ids.len();
        let poses: Vec<Vec<Pose2>> = scenes.iter().map(|s| s.poses()).collect();
        let pose_refs: Vec<&[Pose2]> = poses.iter().map(|p| p.as_slice()).collect();
        Ok(Self {
            graph: InteractionGraph::batched(&pose_refs)?,
            ranges,
            actor_ids,
            past: past
                .into_iter()
                .map(|d| Tensor::matrix(b, 2, d))
                .collect::<Result<_>>()?,
            future: if with_future {
                Some(Tensor::matrix(b, 2 * t, future)?)
            } else {
                None
            },
            traj_scale: config.traj_scale,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.actor_ids.len()
    }

    pub fn num_scenes(&self) -> usize {
        self.ranges.len()
    }

    /// Node rows grouped by their reconstruction weight under `reduction`,
    /// in ascending weight order.
    pub fn recon_groups(
        &self,
        reduction: ReconReduction,
        horizon: usize,
    ) -> Vec<(f64, Vec<usize>)> {
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for r in &self.ranges {
            let w = reduction.factor(r.len(), horizon);
            match groups.iter_mut().find(|(gw, _)| *gw == w) {
                Some((_, rows)) => rows.extend(r.clone()),
                None => groups.push((w, r.clone().collect())),
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        groups
    }

    pub fn future(&self) -> Result<&Tensor> {
        self.future
            .as_ref()
            .ok_or_else(|| invalid("batch has no ground-truth futures"))
    }

    /// Ground-truth future waypoints as one `[B x 2]` tensor per step,
    /// divided by `traj_scale`.
    pub fn future_steps(&self) -> Result<Vec<Tensor>> {
        let f = self.future()?;
        let (b, w) = f.dims2();
        (0..w / 2)
            .map(|t| {
                let d = (0..b)
                    .flat_map(|i| {
                        let r = f.row(i);
                        [r[2 * t] / self.traj_scale, r[2 * t + 1] / self.traj_scale]
                    })
                    .collect();
                Tensor::matrix(b, 2, d)
            })
            .collect()
    }
}

/// Per-actor context features `x_n = MLP(GRU over past waypoints)`.
#[derive(Clone, Debug)]
pub struct ActorEncoder {
    pub gru: GruCell,
    pub mlp: Mlp,
}

impl ActorEncoder {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let h = config.hidden_dim;
        Ok(Self {
            gru: GruCell::new("actor_enc.gru", 2, h)?,
            mlp: Mlp::new(
                "actor_enc.mlp",
                &[h, config.actor_feat_dim, config.actor_feat_dim],
                Activation::Relu,
            )?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.gru.init(store, rng)?;
        self.mlp.init(store, rng)
    }

    pub fn forward(&self, g: &mut Graph, batch: &SceneBatch) -> Result<Var> {
        if batch.past.is_empty() {
            return Err(invalid("actor encoder needs a past trajectory"));
        }
        let mut h = g.constant(Tensor::zeros(&[batch.num_nodes(), self.gru.hidden_dim()]))?;
        for step in &batch.past {
            let a = g.constant(step.clone())?;
            h = self.gru.forward(g, h, a)?;
        }
        self.mlp.forward(g, h)
    }
}

/// Weighted reconstruction: `sum_groups w * term(rows)`, where `term`
/// reduces the selected rows of `per_row` inputs to a scalar.
pub(crate) fn weighted_rows(
    g: &mut Graph,
    groups: &[(f64, Vec<usize>)],
    total_rows: usize,
    mut term: impl FnMut(&mut Graph, Option<&[usize]>) -> Result<Var>,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (w, rows) in groups {
        let sel = if rows.len() == total_rows {
            None
        } else {
            Some(rows.as_slice())
        };
        let t = term(g, sel)?;
        let t = g.scale(t, *w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    acc.ok_or_else(|| invalid("empty reconstruction"))
}

/// Rows `idx` of a matrix.
pub(crate) fn select_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let c = t.cols();
    let mut d = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        d.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), c, d)
}

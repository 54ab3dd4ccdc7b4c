//! Scene interaction module: spatially-aware message passing over a
//! fully-connected actor graph.
//!
//! For every ordered pair `(u, v)` of distinct actors in the same scene a
//! message `m = EdgeMLP(h_u ++ h_v ++ T(c_u, c_v))` is computed, where
//! `T` is [`relative_transform`]. Each node takes the feature-wise max of
//! its incoming messages (zeros when it has none), updates its state with a
//! GRU cell and emits `OutMLP(h')`.
//!
//! Several scenes can share one [`InteractionGraph`]; edges never cross
//! scene boundaries, so a batch behaves exactly like separate calls.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, GruCell, Mlp, ParamStore, Tensor, Var};
use crate::error::{invalid, shape, Result};
use crate::geometry::{relative_transform, Pose2};

pub const EDGE_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hidden_dim: usize,
    /// Widths of the three edge-MLP layers; the last is the message size.
    pub edge_widths: [usize; 3],
    /// Width of the hidden layer of the two-layer output MLP.
    pub out_hidden: usize,
    pub output_dim: usize,
    pub rounds: usize,
    /// Multiplier applied to the relative offsets (meters) before they
    /// enter the edge MLP.
    pub position_scale: f64,
}

impl SimConfig {
    pub fn new(hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            hidden_dim,
            edge_widths: [hidden_dim; 3],
            out_hidden: hidden_dim,
            output_dim,
            rounds: 1,
            position_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0
            || self.edge_widths.contains(&0)
            || self.out_hidden == 0
            || self.output_dim == 0
            || self.rounds == 0
        {
            return Err(invalid(format!("sim dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Topology and edge features of one or more fully-connected actor graphs.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    pub poses: Vec<Pose2>,
    /// Scene index of every node.
    pub scene_of: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Unscaled `T(c_src, c_dst)` per edge.
    pub transforms: Vec<[f64; EDGE_FEATURES]>,
}

impl InteractionGraph {
    pub fn fully_connected(poses: &[Pose2]) -> Result<Self> {
        Self::batched(&[poses])
    }

    /// Disjoint union of one fully-connected graph per scene. Node order is
    /// scene-major.
    pub fn batched(scenes: &[&[Pose2]]) -> Result<Self> {
        let mut g = Self {
            poses: Vec::new(),
            scene_of: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            transforms: Vec::new(),
        };
        for (s, poses) in scenes.iter().enumerate() {
            if poses.is_empty() {
                return Err(invalid("a scene graph needs at least one actor"));
            }
            let base = g.poses.len();
            for v in 0..poses.len() {
                for u in 0..poses.len() {
                    if u != v {
                        g.src.push(base + u);
                        g.dst.push(base + v);
                        g.transforms.push(relative_transform(&poses[u], &poses[v]));
                    }
                }
            }
            g.poses.extend_from_slice(poses);
            g.scene_of.extend(std::iter::repeat_n(s, poses.len()));
        }
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.poses.len()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Edge features with offsets multiplied by `position_scale`.
    pub fn edge_features(&self, position_scale: f64) -> Tensor {
        let data = self
            .transforms
            .iter()
            .flat_map(|t| [t[0] * position_scale, t[1] * position_scale, t[2], t[3]])
            .collect();
        Tensor::matrix(self.num_edges(), EDGE_FEATURES, data).expect("sized by construction")
    }
}

#[derive(Clone, Debug)]
pub struct Sim {
    pub config: SimConfig,
    pub edge_mlp: Mlp,
    pub gru: GruCell,
    pub out_mlp: Mlp,
}

impl Sim {
    pub fn new(prefix: &str, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let [e1, e2, msg] = config.edge_widths;
        Ok(Self {
            edge_mlp: Mlp::new(
                format!("{prefix}.edge_mlp"),
                &[2 * h + EDGE_FEATURES, e1, e2, msg],
                Activation::Relu,
            )?,
            gru: GruCell::new(format!("{prefix}.gru"), msg, h)?,
            out_mlp: Mlp::new(
                format!("{prefix}.out_mlp"),
                &[h, config.out_hidden, config.output_dim],
                Activation::Relu,
            )?,
            config,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.edge_mlp.init(store, rng)?;
        self.gru.init(store, rng)?;
        self.out_mlp.init(store, rng)
    }

    /// Updated node states after the configured message-passing rounds.
    pub fn propagate(&self, g: &mut Graph, graph: &InteractionGraph, h: Var) -> Result<Var> {
        let (n, hd) = g.value(h).dims2();
        if n != graph.num_nodes() || hd != self.config.hidden_dim {
            return Err(shape(
                "sim",
                format!(
                    "hidden {:?} for {} nodes of width {}",
                    g.value(h).shape(),
                    graph.num_nodes(),
                    self.config.hidden_dim
                ),
            ));
        }
        let edge_feat = g.constant(graph.edge_features(self.config.position_scale))?;
        let mut h = h;
        for _ in 0..self.config.rounds {
            let agg = if graph.num_edges() == 0 {
                g.constant(Tensor::zeros(&[n, self.gru.input_dim()]))?
            } else {
                let hu = g.gather_rows(h, &graph.src)?;
                let hv = g.gather_rows(h, &graph.dst)?;
                let input = g.concat_cols(&[hu, hv, edge_feat])?;
                let msg = self.edge_mlp.forward(g, input)?;
                g.segment_max(msg, &graph.dst, n)?
            };
            h = self.gru.forward(g, h, agg)?;
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, graph: &InteractionGraph, h: Var) -> Result<Var> {
        let h = self.propagate(g, graph, h)?;
        self.out_mlp.forward(g, h)
    }
}

/// Either a scene interaction module or a per-actor MLP of matching input
/// and output widths (the no-interaction ablation).
#[derive(Clone, Debug)]
pub enum NodeModel {
    Sim(Sim),
    PerActor(Mlp),
}

impl NodeModel {
    pub fn new(prefix: &str, config: SimConfig, interact: bool) -> Result<Self> {
        if interact {
            Ok(Self::Sim(Sim::new(prefix, config)?))
        } else {
            config.validate()?;
            let h = config.hidden_dim;
            Ok(Self::PerActor(Mlp::new(
                format!("{prefix}.node_mlp"),
                &[h, h, config.out_hidden, config.output_dim],
                Activation::Relu,
            )?))
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        match self {
            Self::Sim(s) => s.init(store, rng),
            Self::PerActor(m) => m.init(store, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, graph: &InteractionGraph, h: Var) -> Result<Var> {
        match self {
            Self::Sim(s) => s.forward(g, graph, h),
            Self::PerActor(m) => m.forward(g, h),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Sim(s) => s.config.output_dim,
            Self::PerActor(m) => m.out_dim(),
        }
    }
}

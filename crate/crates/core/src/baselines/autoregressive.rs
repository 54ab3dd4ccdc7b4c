//! Social autoregressive forecaster.
//!
//! A GRU rolls forward one waypoint at a time. At each step its input is
//! the actor's previous position and the feature-wise max over its
//! neighbours' previous positions (relative, in the actor's frame); it
//! predicts a bivariate Gaussian over the next displacement. Training
//! conditions on ground truth perturbed by `N(0, alpha^2 I)`; inference
//! conditions on the model's own samples.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::explicit::{decode_gaussians, gaussian_nll, GaussianWaypoint, GAUSSIAN_PARAMS};
use crate::autodiff::gaussian::standard_normal;
use crate::autodiff::{Activation, Graph, GruCell, Mlp, ParamStore, Tensor, Var};
use crate::error::{invalid, shape, Result};
use crate::geometry::{Point, Pose2};
use crate::model::{
    select_rows, weighted_rows, ActorEncoder, Forecaster, LossParts, ModelConfig, ModelKind,
    SceneBatch,
};
use crate::samples::{noise_rng, SceneSampleSet};
use crate::scene::Scene;

const STEP_INPUT: usize = 4;

#[derive(Debug)]
pub struct AutoregressiveModel {
    pub config: ModelConfig,
    pub actor_enc: ActorEncoder,
    pub init: Mlp,
    pub gru: GruCell,
    pub out: Mlp,
    rollout_steps: AtomicUsize,
}

impl Clone for AutoregressiveModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            actor_enc: self.actor_enc.clone(),
            init: self.init.clone(),
            gru: self.gru.clone(),
            out: self.out.clone(),
            rollout_steps: AtomicUsize::new(self.rollout_steps()),
        }
    }
}

/// Output of an inference rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// `[sample][actor][t]` positions in each actor's frame.
    pub trajectories: Vec<Vec<Vec<Point>>>,
    /// Predicted displacement distribution per `[sample][actor][t]`.
    pub steps: Vec<Vec<Vec<GaussianWaypoint>>>,
}

/// Previous-step input rows: own position and the feature-wise max of the
/// neighbours' relative positions, both divided by `scale`. `prev` and the
/// returned rows follow the node order of `groups`.
fn step_input(
    prev: &[Point],
    poses: &[Pose2],
    groups: &[std::ops::Range<usize>],
    scale: f64,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(prev.len() * STEP_INPUT);
    let world: Vec<Point> = prev
        .iter()
        .zip(poses)
        .map(|(p, pose)| pose.to_world(*p))
        .collect();
    for r in groups {
        for i in r.clone() {
            let mut social = [f64::NEG_INFINITY; 2];
            for j in r.clone() {
                if j != i {
                    let rel = poses[i].to_local(world[j]);
                    social[0] = social[0].max(rel[0] - prev[i][0]);
                    social[1] = social[1].max(rel[1] - prev[i][1]);
                }
            }
            if r.len() == 1 {
                social = [0.0, 0.0];
            }
            data.extend([
                prev[i][0] / scale,
                prev[i][1] / scale,
                social[0] / scale,
                social[1] / scale,
            ]);
        }
    }
    Tensor::matrix(prev.len(), STEP_INPUT, data)
}

/// Conditioning states for teacher forcing: `states[t]` precedes waypoint
/// `t`; `states[0]` is the current position and later states are the
/// ground truth plus isotropic Gaussian noise of standard deviation
/// `alpha` (meters). `future` is `[B x 2T]`.
pub fn noisy_conditioning<R: Rng + ?Sized>(
    future: &Tensor,
    alpha: f64,
    rng: &mut R,
) -> Vec<Vec<Point>> {
    let (b, w) = future.dims2();
    let t = w / 2;
    let mut states = vec![vec![[0.0, 0.0]; b]];
    for k in 0..t.saturating_sub(1) {
        let row: Vec<Point> = (0..b)
            .map(|i| {
                let r = future.row(i);
                let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [r[2 * k] + alpha * e[0], r[2 * k + 1] + alpha * e[1]]
            })
            .collect();
        states.push(row);
    }
    states
}

impl AutoregressiveModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        Ok(Self {
            actor_enc: ActorEncoder::new(&config)?,
            init: Mlp::new(
                "autoregressive.init_mlp",
                &[config.actor_feat_dim, h, h],
                Activation::Relu,
            )?,
            gru: GruCell::new("autoregressive.gru", STEP_INPUT, h)?,
            out: Mlp::new(
                "autoregressive.out_mlp",
                &[h, h, GAUSSIAN_PARAMS],
                Activation::Relu,
            )?,
            config,
            rollout_steps: AtomicUsize::new(0),
        })
    }

    /// Sequential decode steps executed by inference so far.
    pub fn rollout_steps(&self) -> usize {
        self.rollout_steps.load(Ordering::Relaxed)
    }

    pub fn reset_rollout_steps(&self) {
        self.rollout_steps.store(0, Ordering::Relaxed);
    }

    fn initial_state(&self, g: &mut Graph, batch: &SceneBatch) -> Result<Var> {
        let x = self.actor_enc.forward(g, batch)?;
        let h = self.init.forward(g, x)?;
        g.tanh(h)
    }

    /// Teacher-forced negative log-likelihood of the batch futures given
    /// explicit conditioning states (see [`noisy_conditioning`]).
    pub fn teacher_nll(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        states: &[Vec<Point>],
    ) -> Result<Var> {
        let f = batch.future()?;
        let (b, w) = f.dims2();
        let t = w / 2;
        if states.len() != t || states.iter().any(|s| s.len() != b) {
            return Err(shape(
                "teacher_nll",
                "conditioning states do not match the futures",
            ));
        }
        let scale = self.config.traj_scale;
        let floor = self.config.sigma_floor;
        let groups = batch.recon_groups(self.config.recon_reduction, t);
        let mut h = self.initial_state(g, batch)?;
        let mut total: Option<Var> = None;
        for k in 0..t {
            let input = step_input(&states[k], &batch.graph.poses, &batch.ranges, scale)?;
            let a = g.constant(input)?;
            h = self.gru.forward(g, h, a)?;
            let out = self.out.forward(g, h)?;
            let target: Vec<f64> = (0..b)
                .flat_map(|i| {
                    let r = f.row(i);
                    [
                        (r[2 * k] - states[k][i][0]) / scale,
                        (r[2 * k + 1] - states[k][i][1]) / scale,
                    ]
                })
                .collect();
            let target = Tensor::matrix(b, 2, target)?;
            let nll = weighted_rows(g, &groups, b, |g, rows| match rows {
                Some(r) => {
                    let o = g.gather_rows(out, r)?;
                    gaussian_nll(g, o, &select_rows(&target, r)?, floor)
                }
                None => gaussian_nll(g, out, &target, floor),
            })?;
            total = Some(match total {
                Some(acc) => g.add(acc, nll)?,
                None => nll,
            });
        }
        total.ok_or_else(|| invalid("empty horizon"))
    }

    /// Inference rollout with explicit noise `eps[s][n][t]`.
    pub fn rollout_with_noise(
        &self,
        store: &ParamStore,
        scene: &Scene,
        eps: &[Vec<Vec<[f64; 2]>>],
    ) -> Result<Rollout> {
        let n = scene.num_actors();
        let s_count = eps.len();
        let t_count = self.config.horizon;
        if s_count == 0
            || eps
                .iter()
                .any(|e| e.len() != n || e.iter().any(|v| v.len() != t_count))
        {
            return Err(shape("rollout", "noise must be [samples][actors][horizon]"));
        }
        let copies: Vec<&Scene> = vec![scene; s_count];
        let batch = SceneBatch::inference(&copies, &self.config)?;
        let mut g = Graph::with_params(store);
        let mut h = self.initial_state(&mut g, &batch)?;
        let mut prev = vec![[0.0, 0.0]; s_count * n];
        let mut trajectories = vec![vec![Vec::with_capacity(t_count); n]; s_count];
        let mut steps = vec![vec![Vec::with_capacity(t_count); n]; s_count];
        for t in 0..t_count {
            let input = step_input(
                &prev,
                &batch.graph.poses,
                &batch.ranges,
                self.config.traj_scale,
            )?;
            let a = g.constant(input)?;
            h = self.gru.forward(&mut g, h, a)?;
            let out = self.out.forward(&mut g, h)?;
            let heads = decode_gaussians(
                g.value(out),
                self.config.sigma_floor,
                self.config.traj_scale,
            )?;
            for s in 0..s_count {
                for k in 0..n {
                    let row = s * n + k;
                    let step = heads[row][0];
                    let d = step.sample(eps[s][k][t]);
                    prev[row] = [prev[row][0] + d[0], prev[row][1] + d[1]];
                    trajectories[s][k].push(prev[row]);
                    steps[s][k].push(step);
                }
            }
            self.rollout_steps.fetch_add(1, Ordering::Relaxed);
        }
        Ok(Rollout {
            trajectories,
            steps,
        })
    }
}

impl Forecaster for AutoregressiveModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Autoregressive
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.actor_enc.init(&mut store, &mut rng)?;
        self.init.init(&mut store, &mut rng)?;
        self.gru.init(&mut store, &mut rng)?;
        self.out.init(&mut store, &mut rng)?;
        Ok(store)
    }

    fn loss(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        _step: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossParts)> {
        let states = noisy_conditioning(batch.future()?, self.config.noise_alpha, rng);
        let nll = self.teacher_nll(g, batch, &states)?;
        let total = g.scale(nll, 1.0 / batch.num_scenes() as f64)?;
        let v = g.value(total).item();
        Ok((
            total,
            LossParts {
                recon: v,
                kl: 0.0,
                beta: 0.0,
                total: v,
            },
        ))
    }

    fn sample(
        &self,
        store: &ParamStore,
        scene: &Scene,
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneSampleSet> {
        if num_samples < 1 {
            return Err(invalid("sampling needs at least one sample"));
        }
        let base: u64 = rng.random();
        let t = self.config.horizon;
        let eps: Vec<Vec<Vec<[f64; 2]>>> = (0..num_samples)
            .map(|s| {
                scene
                    .actors
                    .iter()
                    .map(|a| {
                        let e = standard_normal(&[t, 2], &mut noise_rng(base, s, a.id));
                        e.data().chunks(2).map(|c| [c[0], c[1]]).collect()
                    })
                    .collect()
            })
            .collect();
        let r = self.rollout_with_noise(store, scene, &eps)?;
        SceneSampleSet::new(scene, r.trajectories)
    }
}

//! Implicit latent variable model.
//!
//! Every actor carries a diagonal-Gaussian latent `z_n`. The prior
//! `p(Z | X)` and the training-time posterior `q(Z | X, Y)` are each two
//! scene interaction modules (one for the means, one for the log standard
//! deviations) over node states `MLP(x_n)` or `MLP(x_n ++ GRU(y_n))`. The
//! decoder maps `MLP(x_n ++ z_n)` through one more interaction module to
//! all `T` waypoints at once, deterministically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{select_rows, weighted_rows, ActorEncoder, SceneBatch};
use super::config::{ModelConfig, ModelKind};
use super::{Forecaster, LossParts};
use crate::autodiff::gaussian::standard_normal;
use crate::autodiff::{
    kl_diag_gaussian, reparam_with_noise, Activation, DiagGaussian, GaussianVars, Graph, GruCell,
    Mlp, ParamStore, Tensor, Var,
};
use crate::baselines::explicit::{
    constant_noise_trajectory, decode_gaussians, gaussian_nll, GAUSSIAN_PARAMS,
};
use crate::error::{invalid, shape, Result};
use crate::geometry::{Point, Pose2};
use crate::samples::{noise_rng, SceneSampleSet};
use crate::scene::Scene;
use crate::sim::{InteractionGraph, NodeModel, SimConfig};

fn sim_config(c: &ModelConfig, output_dim: usize) -> SimConfig {
    let mut s = SimConfig::new(c.hidden_dim, output_dim);
    s.rounds = c.sim_rounds;
    s.position_scale = c.position_scale;
    s
}

/// Prior or posterior network producing per-actor latent Gaussians.
#[derive(Clone, Debug)]
pub struct LatentHead {
    pub init: Mlp,
    pub mu: NodeModel,
    pub log_sigma: NodeModel,
    /// Future-trajectory encoder; present only for the posterior.
    pub future_gru: Option<GruCell>,
}

impl LatentHead {
    pub fn new(prefix: &str, c: &ModelConfig, interact: bool, posterior: bool) -> Result<Self> {
        let h = c.hidden_dim;
        let in_dim = c.actor_feat_dim + if posterior { h } else { 0 };
        Ok(Self {
            init: Mlp::new(
                format!("{prefix}.init_mlp"),
                &[in_dim, h, h],
                Activation::Relu,
            )?,
            mu: NodeModel::new(
                &format!("{prefix}.mu"),
                sim_config(c, c.latent_dim),
                interact,
            )?,
            log_sigma: NodeModel::new(
                &format!("{prefix}.log_sigma"),
                sim_config(c, c.latent_dim),
                interact,
            )?,
            future_gru: if posterior {
                Some(GruCell::new(format!("{prefix}.future_gru"), 2, h)?)
            } else {
                None
            },
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.init.init(store, rng)?;
        self.mu.init(store, rng)?;
        self.log_sigma.init(store, rng)?;
        if let Some(gru) = &self.future_gru {
            gru.init(store, rng)?;
        }
        Ok(())
    }

    /// `future` must be given exactly when this is a posterior head.
    pub fn forward(
        &self,
        g: &mut Graph,
        graph: &InteractionGraph,
        x: Var,
        future: Option<&[Tensor]>,
    ) -> Result<GaussianVars> {
        let input = match (&self.future_gru, future) {
            (Some(gru), Some(steps)) => {
                let n = g.value(x).rows();
                let mut h = g.constant(Tensor::zeros(&[n, gru.hidden_dim()]))?;
                for y in steps {
                    let a = g.constant(y.clone())?;
                    h = gru.forward(g, h, a)?;
                }
                g.concat_cols(&[x, h])?
            }
            (None, None) => x,
            (Some(_), None) => return Err(invalid("posterior needs ground-truth futures")),
            (None, Some(_)) => return Err(invalid("prior does not take futures")),
        };
        let h = self.init.forward(g, input)?;
        Ok(GaussianVars {
            mu: self.mu.forward(g, graph, h)?,
            log_sigma: self.log_sigma.forward(g, graph, h)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub init: Mlp,
    pub node: NodeModel,
}

impl Decoder {
    pub fn new(c: &ModelConfig) -> Result<Self> {
        let h = c.hidden_dim;
        let per_step = if c.ablation.implicit_output {
            2
        } else {
            GAUSSIAN_PARAMS
        };
        Ok(Self {
            init: Mlp::new(
                "decoder.init_mlp",
                &[c.actor_feat_dim + c.latent_dim, h, h],
                Activation::Relu,
            )?,
            node: NodeModel::new(
                "decoder.sim",
                sim_config(c, per_step * c.horizon),
                c.ablation.sim_decoder,
            )?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.init.init(store, rng)?;
        self.node.init(store, rng)
    }

    /// Raw head output `[B x 2T]` (implicit) or `[B x 5T]` (explicit), in
    /// units of meters divided by `traj_scale`.
    pub fn forward(&self, g: &mut Graph, graph: &InteractionGraph, x: Var, z: Var) -> Result<Var> {
        let input = g.concat_cols(&[x, z])?;
        let h = self.init.forward(g, input)?;
        self.node.forward(g, graph, h)
    }
}

#[derive(Clone, Debug)]
pub struct Ilvm {
    pub config: ModelConfig,
    pub actor_enc: ActorEncoder,
    /// `None` when the prior is fixed to a standard normal.
    pub prior: Option<LatentHead>,
    pub encoder: LatentHead,
    pub decoder: Decoder,
}

impl Ilvm {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ab = config.ablation;
        Ok(Self {
            actor_enc: ActorEncoder::new(&config)?,
            prior: if ab.learned_prior {
                Some(LatentHead::new("prior", &config, ab.sim_encoder, false)?)
            } else {
                None
            },
            encoder: LatentHead::new("encoder", &config, ab.sim_encoder, true)?,
            decoder: Decoder::new(&config)?,
            config,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.actor_enc.init(store, rng)?;
        if let Some(p) = &self.prior {
            p.init(store, rng)?;
        }
        self.encoder.init(store, rng)?;
        self.decoder.init(store, rng)
    }

    pub fn features(&self, g: &mut Graph, batch: &SceneBatch) -> Result<Var> {
        self.actor_enc.forward(g, batch)
    }

    pub fn prior_forward(
        &self,
        g: &mut Graph,
        graph: &InteractionGraph,
        x: Var,
    ) -> Result<GaussianVars> {
        match &self.prior {
            Some(p) => p.forward(g, graph, x, None),
            None => {
                let std = DiagGaussian::standard(&[g.value(x).rows(), self.config.latent_dim]);
                GaussianVars::constant(g, &std)
            }
        }
    }

    pub fn encoder_forward(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        x: Var,
    ) -> Result<GaussianVars> {
        let steps = batch.future_steps()?;
        self.encoder.forward(g, &batch.graph, x, Some(&steps))
    }

    /// Implicit-output trajectories in meters, `[B x 2T]`.
    pub fn decode(&self, g: &mut Graph, graph: &InteractionGraph, x: Var, z: Var) -> Result<Var> {
        let raw = self.decoder.forward(g, graph, x, z)?;
        if self.config.ablation.implicit_output {
            g.scale(raw, self.config.traj_scale)
        } else {
            Ok(raw)
        }
    }

    /// Reconstruction plus `beta` times the KL from posterior to prior,
    /// with one reparameterized posterior sample. The reconstruction of a
    /// scene is reduced per `recon_reduction`; both terms are then averaged
    /// over the scenes of the batch.
    pub fn forecast_loss(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        beta: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossParts)> {
        let eps = standard_normal(&[batch.num_nodes(), self.config.latent_dim], rng);
        self.forecast_loss_with_noise(g, batch, beta, eps)
    }

    pub fn forecast_loss_with_noise(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        beta: f64,
        eps: Tensor,
    ) -> Result<(Var, LossParts)> {
        let future = batch.future()?.clone();
        let x = self.features(g, batch)?;
        let q = self.encoder_forward(g, batch, x)?;
        let p = self.prior_forward(g, &batch.graph, x)?;
        let z = reparam_with_noise(g, q, eps)?;
        let out = self.decode(g, &batch.graph, x, z)?;
        let groups = batch.recon_groups(self.config.recon_reduction, self.config.horizon);
        let recon = if self.config.ablation.implicit_output {
            let y = g.constant(future)?;
            let diff = g.sub(out, y)?;
            let delta = self.config.huber_delta;
            weighted_rows(g, &groups, batch.num_nodes(), |g, rows| {
                let d = match rows {
                    Some(r) => g.gather_rows(diff, r)?,
                    None => diff,
                };
                g.huber_sum(d, delta)
            })?
        } else {
            let scale = self.config.traj_scale;
            let floor = self.config.sigma_floor;
            let (b, w) = future.dims2();
            let scaled = Tensor::matrix(b, w, future.data().iter().map(|v| v / scale).collect())?;
            weighted_rows(g, &groups, batch.num_nodes(), |g, rows| match rows {
                Some(r) => {
                    let o = g.gather_rows(out, r)?;
                    gaussian_nll(g, o, &select_rows(&scaled, r)?, floor)
                }
                None => gaussian_nll(g, out, &scaled, floor),
            })?
        };
        let kl = kl_diag_gaussian(g, q, p)?;
        let weighted = g.scale(kl, beta)?;
        let sum = g.add(recon, weighted)?;
        let inv = 1.0 / batch.num_scenes() as f64;
        let total = g.scale(sum, inv)?;
        let parts = LossParts {
            recon: g.value(recon).item() * inv,
            kl: g.value(kl).item() * inv,
            beta,
            total: g.value(total).item(),
        };
        Ok((total, parts))
    }

    /// Context features `[N x F]` and prior latents for one scene.
    pub fn prior_distribution(
        &self,
        store: &ParamStore,
        scene: &Scene,
    ) -> Result<(Tensor, DiagGaussian)> {
        let batch = SceneBatch::inference(&[scene], &self.config)?;
        let mut g = Graph::with_params(store);
        let x = self.features(&mut g, &batch)?;
        let p = self.prior_forward(&mut g, &batch.graph, x)?;
        Ok((g.value(x).clone(), p.detach(&g)))
    }

    /// Posterior latents for a scene with ground truth.
    pub fn posterior_distribution(
        &self,
        store: &ParamStore,
        scene: &Scene,
    ) -> Result<DiagGaussian> {
        let batch = SceneBatch::new(&[scene], &self.config)?;
        let mut g = Graph::with_params(store);
        let x = self.features(&mut g, &batch)?;
        Ok(self.encoder_forward(&mut g, &batch, x)?.detach(&g))
    }

    /// Decodes `k` stacked latent samples for one scene: `x [N x F]`,
    /// `z [kN x D]`. Returns the raw decoder rows (meters for implicit
    /// output, head parameters otherwise).
    fn decode_stacked(
        &self,
        store: &ParamStore,
        poses: &[Pose2],
        x: &Tensor,
        z: Tensor,
    ) -> Result<Tensor> {
        let n = poses.len();
        let (zr, zc) = z.dims2();
        if n == 0 || zr % n != 0 || zc != self.config.latent_dim || x.rows() != n {
            return Err(shape(
                "decode_scene",
                format!("x {:?}, z {:?} for {n} actors", x.shape(), z.shape()),
            ));
        }
        let k = zr / n;
        let copies: Vec<&[Pose2]> = vec![poses; k];
        let graph = InteractionGraph::batched(&copies)?;
        let idx: Vec<usize> = (0..k).flat_map(|_| 0..n).collect();
        let mut g = Graph::with_params(store);
        let xv = g.constant(x.clone())?;
        let xr = g.gather_rows(xv, &idx)?;
        let zv = g.constant(z)?;
        let out = self.decode(&mut g, &graph, xr, zv)?;
        Ok(g.value(out).clone())
    }

    fn rows_to_trajectories(&self, out: &Tensor, rows: std::ops::Range<usize>) -> Vec<Vec<Point>> {
        rows.map(|i| out.row(i).chunks(2).map(|p| [p[0], p[1]]).collect())
            .collect()
    }

    /// Deterministic decode of one latent per actor (`z [N x D]`). With an
    /// explicit head the waypoint means are returned.
    pub fn decode_scene(
        &self,
        store: &ParamStore,
        scene: &Scene,
        x: &Tensor,
        z: &Tensor,
    ) -> Result<Vec<Vec<Point>>> {
        let out = self.decode_stacked(store, &scene.poses(), x, z.clone())?;
        if self.config.ablation.implicit_output {
            Ok(self.rows_to_trajectories(&out, 0..scene.num_actors()))
        } else {
            let heads = decode_gaussians(&out, self.config.sigma_floor, self.config.traj_scale)?;
            Ok(heads
                .iter()
                .map(|h| h.iter().map(|w| w.mu).collect())
                .collect())
        }
    }

    /// Draws `num_samples` scene latents from the prior and decodes them
    /// in one batched pass. The noise of sample `s` for an actor depends
    /// only on `(rng draw, s, actor id)`.
    pub fn sample_scenes(
        &self,
        store: &ParamStore,
        scene: &Scene,
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneSampleSet> {
        if num_samples < 1 {
            return Err(invalid("sample_scenes needs at least one sample"));
        }
        let (x, prior) = self.prior_distribution(store, scene)?;
        let base: u64 = rng.random();
        let (n, d) = (scene.num_actors(), self.config.latent_dim);
        let mut z = Vec::with_capacity(num_samples * n * d);
        let mut head_noise = Vec::with_capacity(num_samples * n);
        for s in 0..num_samples {
            for (k, a) in scene.actors.iter().enumerate() {
                let mut r = noise_rng(base, s, a.id);
                let eps = standard_normal(&[d], &mut r);
                for j in 0..d {
                    let idx = k * d + j;
                    z.push(
                        prior.mu.data()[idx] + prior.log_sigma.data()[idx].exp() * eps.data()[j],
                    );
                }
                let e2 = standard_normal(&[2], &mut r);
                head_noise.push([e2.data()[0], e2.data()[1]]);
            }
        }
        let out = self.decode_stacked(
            store,
            &scene.poses(),
            &x,
            Tensor::matrix(num_samples * n, d, z)?,
        )?;
        let trajectories = if self.config.ablation.implicit_output {
            (0..num_samples)
                .map(|s| self.rows_to_trajectories(&out, s * n..(s + 1) * n))
                .collect()
        } else {
            let heads = decode_gaussians(&out, self.config.sigma_floor, self.config.traj_scale)?;
            (0..num_samples)
                .map(|s| {
                    (0..n)
                        .map(|k| {
                            constant_noise_trajectory(&heads[s * n + k], head_noise[s * n + k])
                        })
                        .collect()
                })
                .collect()
        };
        SceneSampleSet::new(scene, trajectories)
    }

    /// The `[N, D]` prior latents that [`Ilvm::sample_scenes`] would decode
    /// given the same `rng` state, one per sample.
    pub fn sample_latents(
        &self,
        store: &ParamStore,
        scene: &Scene,
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Tensor>> {
        let (_, prior) = self.prior_distribution(store, scene)?;
        let base: u64 = rng.random();
        let (n, d) = (scene.num_actors(), self.config.latent_dim);
        (0..num_samples)
            .map(|s| {
                let mut z = Vec::with_capacity(n * d);
                for (k, a) in scene.actors.iter().enumerate() {
                    let eps = standard_normal(&[d], &mut noise_rng(base, s, a.id));
                    for j in 0..d {
                        let idx = k * d + j;
                        z.push(
                            prior.mu.data()[idx]
                                + prior.log_sigma.data()[idx].exp() * eps.data()[j],
                        );
                    }
                }
                Tensor::matrix(n, d, z)
            })
            .collect()
    }

    /// Decodes the latents along the segment from `za` to `zb` at
    /// `steps` evenly spaced points, endpoints included.
    pub fn interpolate_latents(
        &self,
        store: &ParamStore,
        scene: &Scene,
        za: &Tensor,
        zb: &Tensor,
        steps: usize,
    ) -> Result<Vec<Vec<Vec<Point>>>> {
        if steps < 2 {
            return Err(invalid("interpolation needs at least two steps"));
        }
        if za.shape() != zb.shape() {
            return Err(shape(
                "interpolate_latents",
                format!("{:?} vs {:?}", za.shape(), zb.shape()),
            ));
        }
        let (x, _) = self.prior_distribution(store, scene)?;
        (0..steps)
            .map(|k| {
                let z = if k == 0 {
                    za.clone()
                } else if k == steps - 1 {
                    zb.clone()
                } else {
                    let lam = k as f64 / (steps - 1) as f64;
                    let d = za
                        .data()
                        .iter()
                        .zip(zb.data())
                        .map(|(a, b)| (1.0 - lam) * a + lam * b)
                        .collect();
                    Tensor::new(za.shape().to_vec(), d)?
                };
                self.decode_scene(store, scene, &x, &z)
            })
            .collect()
    }
}

impl Forecaster for Ilvm {
    fn kind(&self) -> ModelKind {
        ModelKind::Ilvm(self.config.ablation.index().unwrap_or(0))
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        self.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(store)
    }

    fn loss(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        step: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossParts)> {
        self.forecast_loss(g, batch, self.config.beta.at(step), rng)
    }

    fn sample(
        &self,
        store: &ParamStore,
        scene: &Scene,
        num_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneSampleSet> {
        self.sample_scenes(store, scene, num_samples, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::autodiff::huber;
    use crate::model::{train, Ablation, BetaSchedule, ReconReduction, TrainConfig};
    use crate::scenegen::random_scene;

    fn tiny(variant: u8) -> Ilvm {
        let mut c = ModelConfig::tiny();
        c.ablation = Ablation::variant(variant).unwrap();
        Ilvm::new(c).unwrap()
    }

    fn scene(seed: u64, n: usize) -> Scene {
        let c = ModelConfig::tiny();
        random_scene(
            seed,
            n,
            c.history,
            c.horizon,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
    }

    /// Initial parameters plus small noise, so that no ReLU sits exactly at
    /// its kink (zero biases and dead inputs otherwise put it there).
    fn generic_params(m: &Ilvm, seed: u64) -> ParamStore {
        let mut store = m.init_params(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        store.map_values(|_, v| v + rng.random_range(-0.05..0.05));
        store
    }

    fn rows_equal(a: &[Vec<Point>], b: &[Vec<Point>]) -> bool {
        a == b
    }

    #[test]
    fn zero_weights_give_equal_features() {
        let m = tiny(0);
        let mut store = m.init_params(1).unwrap();
        store.map_values(|name, v| {
            if name.starts_with("actor_enc.mlp") && name.ends_with("bias") {
                v + 0.3
            } else {
                0.0
            }
        });
        let s = scene(2, 4);
        let (x, _) = m.prior_distribution(&store, &s).unwrap();
        for i in 1..4 {
            assert_eq!(x.row(i), x.row(0));
        }
        assert!(x.row(0).iter().all(|v| *v != 0.0));
    }

    #[test]
    fn zero_weights_prior_and_decoder_emit_biases() {
        let m = tiny(0);
        let mut store = m.init_params(1).unwrap();
        store.map_values(|_, _| 0.0);
        store
            .get_mut("prior.mu.out_mlp.1.bias")
            .unwrap()
            .data_mut()
            .fill(0.7);
        store
            .get_mut("prior.log_sigma.out_mlp.1.bias")
            .unwrap()
            .data_mut()
            .fill(-0.4);
        store
            .get_mut("decoder.sim.out_mlp.1.bias")
            .unwrap()
            .data_mut()
            .fill(0.25);
        let s = scene(3, 3);
        let (x, p) = m.prior_distribution(&store, &s).unwrap();
        assert!(p.mu.data().iter().all(|v| *v == 0.7));
        assert!(p.log_sigma.data().iter().all(|v| *v == -0.4));
        let z = Tensor::zeros(&[3, m.config.latent_dim]);
        let y = m.decode_scene(&store, &s, &x, &z).unwrap();
        let want = 0.25 * m.config.traj_scale;
        assert!(y.iter().flatten().all(|p| p[0] == want && p[1] == want));
    }

    #[test]
    fn decode_is_deterministic() {
        let m = tiny(0);
        let store = m.init_params(4).unwrap();
        let s = scene(5, 3);
        let (x, p) = m.prior_distribution(&store, &s).unwrap();
        let z = p
            .reparam_with(&standard_normal(
                &[3, m.config.latent_dim],
                &mut ChaCha8Rng::seed_from_u64(0),
            ))
            .unwrap();
        let a = m.decode_scene(&store, &s, &x, &z).unwrap();
        let b = m.decode_scene(&store, &s, &x, &z).unwrap();
        assert!(rows_equal(&a, &b));
    }

    #[test]
    fn other_actors_latent_moves_each_trajectory() {
        let m = tiny(0);
        let store = m.init_params(6).unwrap();
        for seed in 0..5 {
            let s = scene(seed, 3);
            let (x, p) = m.prior_distribution(&store, &s).unwrap();
            let z = p.mu.clone();
            let base = m.decode_scene(&store, &s, &x, &z).unwrap();
            let mut z2 = z.clone();
            let d = m.config.latent_dim;
            for j in 0..d {
                z2.data_mut()[2 * d + j] += 1.0;
            }
            let moved = m.decode_scene(&store, &s, &x, &z2).unwrap();
            assert_ne!(base[0], moved[0]);
            assert_ne!(base[1], moved[1]);
        }
    }

    #[test]
    fn prior_mean_depends_on_other_actors() {
        let m = tiny(0);
        let store = generic_params(&m, 8);
        let s = scene(9, 3);
        let (_, p) = m.prior_distribution(&store, &s).unwrap();
        let mut s2 = s.clone();
        for a in &mut s2.actors[1..] {
            a.pose.x += 3.0;
            a.past[0][1] += 2.0;
        }
        let (_, p2) = m.prior_distribution(&store, &s2).unwrap();
        assert_ne!(p.mu.row(0), p2.mu.row(0));
    }

    #[test]
    fn single_actor_prior_matches_per_actor_pipeline() {
        // with one actor the interaction module sees an empty neighbourhood
        let m = tiny(0);
        let store = m.init_params(10).unwrap();
        let s = scene(11, 1);
        let (x, p) = m.prior_distribution(&store, &s).unwrap();
        let prior = m.prior.as_ref().unwrap();
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x).unwrap();
        let h = prior.init.forward(&mut g, xv).unwrap();
        let NodeModel::Sim(sim) = &prior.mu else {
            panic!("expected SIM")
        };
        let hv = g.value(h).clone();
        let zero = g
            .constant(Tensor::zeros(&[1, sim.gru.input_dim()]))
            .unwrap();
        let h0 = g.constant(hv).unwrap();
        let h1 = sim.gru.forward(&mut g, h0, zero).unwrap();
        let mu = sim.out_mlp.forward(&mut g, h1).unwrap();
        assert_eq!(g.value(mu).data(), p.mu.data());
    }

    #[test]
    fn encoder_reduces_to_prior_when_future_is_ignored() {
        let m = tiny(0);
        let mut store = m.init_params(12).unwrap();
        store.zero_prefix("encoder.future_gru");
        let names: Vec<String> = store
            .names()
            .filter(|n| n.starts_with("prior."))
            .cloned()
            .collect();
        let f = m.config.actor_feat_dim;
        for name in names {
            let src = store.get(&name).unwrap().clone();
            let dst_name = name.replacen("prior.", "encoder.", 1);
            let dst = store.get_mut(&dst_name).unwrap();
            if name == "prior.init_mlp.0.weight" {
                dst.data_mut()[..src.len()].copy_from_slice(src.data());
                assert_eq!(src.rows(), f);
            } else {
                *dst = src;
            }
        }
        let s = scene(13, 3);
        let (_, p) = m.prior_distribution(&store, &s).unwrap();
        let q = m.posterior_distribution(&store, &s).unwrap();
        for (a, b) in
            p.mu.data()
                .iter()
                .zip(q.mu.data())
                .chain(p.log_sigma.data().iter().zip(q.log_sigma.data()))
        {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn posterior_responds_to_future() {
        let m = tiny(0);
        let store = m.init_params(14).unwrap();
        let s = scene(15, 2);
        let q = m.posterior_distribution(&store, &s).unwrap();
        let mut s2 = s.clone();
        s2.actors[1].future[2][0] += 1.5;
        let q2 = m.posterior_distribution(&store, &s2).unwrap();
        assert_ne!(q.mu, q2.mu);
    }

    #[test]
    fn sampling_is_permutation_equivariant() {
        for variant in [0, 1] {
            let m = tiny(variant);
            let store = m.init_params(16).unwrap();
            for seed in 0..10 {
                let n = 2 + seed as usize % 4;
                let s = scene(100 + seed, n);
                let mut perm: Vec<usize> = (0..n).rev().collect();
                perm.rotate_left(1);
                let sp = s.permuted(&perm);
                let a = m
                    .sample_scenes(&store, &s, 4, &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap();
                let b = m
                    .sample_scenes(&store, &sp, 4, &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap();
                for k in 0..4 {
                    for (j, &i) in perm.iter().enumerate() {
                        assert_eq!(b.trajectories[k][j], a.trajectories[k][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_reproducible_and_collapses_without_variance() {
        let m = tiny(0);
        let mut store = m.init_params(17).unwrap();
        let s = scene(18, 3);
        let a = m
            .sample_scenes(&store, &s, 5, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = m
            .sample_scenes(&store, &s, 5, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trajectories[0], a.trajectories[1]);
        store.zero_prefix("prior.log_sigma");
        store
            .get_mut("prior.log_sigma.out_mlp.1.bias")
            .unwrap()
            .data_mut()
            .fill(-60.0);
        let c = m
            .sample_scenes(&store, &s, 5, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        for k in 1..5 {
            assert_eq!(c.trajectories[k], c.trajectories[0]);
        }
        assert!(m
            .sample_scenes(&store, &s, 0, &mut ChaCha8Rng::seed_from_u64(2))
            .is_err());
    }

    #[test]
    fn sample_latents_decode_to_sample_scenes() {
        let m = tiny(0);
        let store = generic_params(&m, 21);
        let s = scene(22, 3);
        let set = m
            .sample_scenes(&store, &s, 4, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let zs = m
            .sample_latents(&store, &s, 4, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let (x, _) = m.prior_distribution(&store, &s).unwrap();
        for (k, z) in zs.iter().enumerate() {
            let dec = m.decode_scene(&store, &s, &x, z).unwrap();
            for (a, b) in dec
                .iter()
                .flatten()
                .zip(set.trajectories[k].iter().flatten())
            {
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_spread_grows_with_prior_sigma() {
        let mut c = ModelConfig::tiny();
        c.latent_dim = 1;
        let m = Ilvm::new(c).unwrap();
        let mut store = m.init_params(19).unwrap();
        store.zero_prefix("prior.log_sigma");
        let s = scene(20, 1);
        let mut last = 0.0;
        for log_sigma in [-4.0, -2.0, 0.0] {
            store
                .get_mut("prior.log_sigma.out_mlp.1.bias")
                .unwrap()
                .data_mut()
                .fill(log_sigma);
            let set = m
                .sample_scenes(&store, &s, 400, &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap();
            let last_pts: Vec<Point> = set
                .trajectories
                .iter()
                .map(|t| *t[0].last().unwrap())
                .collect();
            let mean = last_pts.iter().fold([0.0, 0.0], |a, p| {
                [a[0] + p[0] / 400.0, a[1] + p[1] / 400.0]
            });
            let var: f64 = last_pts
                .iter()
                .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
                .sum::<f64>()
                / 400.0;
            assert!(var > last, "variance {var} at log sigma {log_sigma}");
            last = var;
        }
    }

    #[test]
    fn loss_matches_compositional_recomputation() {
        for variant in [0, 2] {
            let mut m = tiny(variant);
            for reduction in [ReconReduction::Sum, ReconReduction::WaypointMean] {
                m.config.recon_reduction = reduction;
                let store = m.init_params(21).unwrap();
                let s = scene(22, 3);
                let d = m.config.latent_dim;
                let eps = standard_normal(&[3, d], &mut ChaCha8Rng::seed_from_u64(5));
                let batch = SceneBatch::new(&[&s], &m.config).unwrap();
                let mut g = Graph::with_params(&store);
                let (loss, parts) = m
                    .forecast_loss_with_noise(&mut g, &batch, 0.3, eps.clone())
                    .unwrap();

                let (x, p) = m.prior_distribution(&store, &s).unwrap();
                let q = m.posterior_distribution(&store, &s).unwrap();
                let z = q.reparam_with(&eps).unwrap();
                let y = m.decode_scene(&store, &s, &x, &z).unwrap();
                let factor = reduction.factor(3, m.config.horizon);
                let mut recon = 0.0;
                for (pred, a) in y.iter().zip(&s.actors) {
                    for (u, v) in pred.iter().zip(&a.future) {
                        recon += huber(u[0] - v[0], 1.0) + huber(u[1] - v[1], 1.0);
                    }
                }
                recon *= factor;
                let kl = kl_value(&q, &p).unwrap();
                assert!((parts.recon - recon).abs() < 1e-10 * recon.max(1.0));
                assert!((parts.kl - kl).abs() < 1e-10 * kl.max(1.0));
                assert!((g.value(loss).item() - (recon + 0.3 * kl)).abs() < 1e-10 * recon.max(1.0));

                let mut g0 = Graph::with_params(&store);
                let (l0, p0) = m
                    .forecast_loss_with_noise(&mut g0, &batch, 0.0, eps)
                    .unwrap();
                assert_eq!(g0.value(l0).item(), p0.recon);
                assert!(p0.kl >= 0.0 && p0.recon >= 0.0);
            }
        }
    }

    use crate::autodiff::kl_value;

    #[test]
    fn loss_is_zero_for_perfect_fit_and_matching_posterior() {
        let m = tiny(0);
        let mut store = m.init_params(23).unwrap();
        store.map_values(|_, _| 0.0);
        let mut s = scene(24, 2);
        for a in &mut s.actors {
            a.future.iter_mut().for_each(|p| *p = [0.0, 0.0]);
        }
        let batch = SceneBatch::new(&[&s], &m.config).unwrap();
        let mut g = Graph::with_params(&store);
        let eps = standard_normal(&[2, m.config.latent_dim], &mut ChaCha8Rng::seed_from_u64(0));
        let (loss, _) = m
            .forecast_loss_with_noise(&mut g, &batch, 0.05, eps)
            .unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    fn model_gradcheck(variant: u8, seed: u64) -> gradcheck::GradCheckReport {
        let m = tiny(variant);
        let store = generic_params(&m, seed);
        let scenes = [scene(seed, 3), scene(seed + 1, 2)];
        let refs: Vec<&Scene> = scenes.iter().collect();
        let batch = SceneBatch::new(&refs, &m.config).unwrap();
        let eps = standard_normal(
            &[5, m.config.latent_dim],
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        let eval = |s: &ParamStore| -> Result<(f64, crate::autodiff::Gradients)> {
            let mut g = Graph::with_params(s);
            let (l, _) = m.forecast_loss_with_noise(&mut g, &batch, 0.7, eps.clone())?;
            Ok((g.value(l).item(), g.backward(l)?))
        };
        let (_, grads) = eval(&store).unwrap();
        let r = gradcheck::check_params(&store, &grads, Some(6), |s| Ok(eval(s)?.0)).unwrap();
        r
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        for variant in 0..=5 {
            let r = model_gradcheck(variant, 30 + variant as u64);
            assert!(r.max_rel_error < 1e-4, "M{variant}: {r:?}");
        }
    }

    #[test]
    fn interpolation_hits_endpoints() {
        let m = tiny(0);
        let store = m.init_params(25).unwrap();
        let s = scene(26, 2);
        let (x, _) = m.prior_distribution(&store, &s).unwrap();
        let d = m.config.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let za = standard_normal(&[2, d], &mut rng);
        let zb = standard_normal(&[2, d], &mut rng);
        let path = m.interpolate_latents(&store, &s, &za, &zb, 5).unwrap();
        assert_eq!(path.len(), 5);
        assert_eq!(path[0], m.decode_scene(&store, &s, &x, &za).unwrap());
        assert_eq!(path[4], m.decode_scene(&store, &s, &x, &zb).unwrap());
        let same = m.interpolate_latents(&store, &s, &za, &za, 3).unwrap();
        assert!(same.iter().all(|y| *y == same[0]));
        assert!(m.interpolate_latents(&store, &s, &za, &zb, 1).is_err());
    }

    #[test]
    fn decode_is_continuous_in_the_latent() {
        let m = tiny(0);
        let store = m.init_params(27).unwrap();
        let s = scene(28, 3);
        let (x, p) = m.prior_distribution(&store, &s).unwrap();
        let mut z2 = p.mu.clone();
        z2.data_mut().iter_mut().for_each(|v| *v += 1e-6);
        let a = m.decode_scene(&store, &s, &x, &p.mu).unwrap();
        let b = m.decode_scene(&store, &s, &x, &z2).unwrap();
        let diff: f64 = a
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(u, v)| (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2))
            .sum::<f64>()
            .sqrt();
        let delta = 1e-6 * (p.mu.len() as f64).sqrt();
        assert!(diff / delta < 1e6);
    }

    #[test]
    fn every_ablation_builds_and_trains() {
        let scenes: Vec<Scene> = (0..8).map(|i| scene(40 + i, 1 + i as usize % 3)).collect();
        for variant in 0..=5 {
            let mut m = tiny(variant);
            m.config.beta = BetaSchedule::constant(0.05);
            let store = m.init_params(0).unwrap();
            let names: Vec<&String> = store.names().collect();
            let has = |p: &str| names.iter().any(|n| n.starts_with(p));
            let ab = m.config.ablation;
            assert_eq!(has("prior."), ab.learned_prior);
            assert_eq!(has("encoder.mu.node_mlp"), !ab.sim_encoder);
            assert_eq!(has("decoder.sim.node_mlp"), !ab.sim_decoder);
            let out = train(
                &m,
                &scenes,
                &TrainConfig {
                    steps: 5,
                    batch_size: 4,
                    ..TrainConfig::default()
                },
            )
            .unwrap();
            assert!(out.curve.iter().all(|r| r.total.is_finite()));
            let set = m
                .sample_scenes(&out.store, &scenes[2], 3, &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
            set.validate().unwrap();
        }
    }

    #[test]
    fn training_is_reproducible_and_fits() {
        let scenes: Vec<Scene> = (0..8).map(|i| scene(60 + i, 2)).collect();
        let mut m = tiny(0);
        m.config.hidden_dim = 16;
        m.config.actor_feat_dim = 16;
        let cfg = TrainConfig {
            steps: 150,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train(&m, &scenes, &cfg).unwrap();
        let b = train(&m, &scenes, &cfg).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.curve, b.curve);
        let first = a.curve[0].recon;
        let last = a.curve.last().unwrap().recon;
        assert!(last < 0.5 * first, "recon {first} -> {last}");
    }
}

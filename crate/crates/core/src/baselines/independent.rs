//! Independent explicit-Gaussian forecaster: no interaction, no latent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::explicit::{
    constant_noise_trajectory, decode_gaussians, gaussian_nll, GaussianWaypoint, GAUSSIAN_PARAMS,
};
use crate::autodiff::gaussian::standard_normal;
use crate::autodiff::{Activation, Graph, Mlp, ParamStore, Tensor, Var};
use crate::error::{invalid, Result};
use crate::model::{
    select_rows, weighted_rows, ActorEncoder, Forecaster, LossParts, ModelConfig, ModelKind,
    SceneBatch,
};
use crate::samples::{noise_rng, SceneSampleSet};
use crate::scene::Scene;

#[derive(Clone, Debug)]
pub struct IndependentHead {
    pub config: ModelConfig,
    pub actor_enc: ActorEncoder,
    pub head: Mlp,
}

impl IndependentHead {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        Ok(Self {
            actor_enc: ActorEncoder::new(&config)?,
            head: Mlp::new(
                "independent.head",
                &[
                    config.actor_feat_dim,
                    h,
                    h,
                    GAUSSIAN_PARAMS * config.horizon,
                ],
                Activation::Relu,
            )?,
            config,
        })
    }

    /// Raw head output `[B x 5T]`.
    pub fn forward(&self, g: &mut Graph, batch: &SceneBatch) -> Result<Var> {
        let x = self.actor_enc.forward(g, batch)?;
        self.head.forward(g, x)
    }

    /// Negative log-likelihood of the batch futures, reduced per scene as
    /// configured by `recon_reduction`.
    pub fn nll(&self, g: &mut Graph, batch: &SceneBatch) -> Result<Var> {
        let out = self.forward(g, batch)?;
        let f = batch.future()?;
        let s = self.config.traj_scale;
        let target = Tensor::new(f.shape().to_vec(), f.data().iter().map(|v| v / s).collect())?;
        let floor = self.config.sigma_floor;
        let groups = batch.recon_groups(self.config.recon_reduction, self.config.horizon);
        weighted_rows(g, &groups, batch.num_nodes(), |g, rows| match rows {
            Some(r) => {
                let o = g.gather_rows(out, r)?;
                gaussian_nll(g, o, &select_rows(&target, r)?, floor)
            }
            None => gaussian_nll(g, out, &target, floor),
        })
    }

    /// Per-actor waypoint Gaussians in meters.
    pub fn head_forward(
        &self,
        store: &ParamStore,
        scene: &Scene,
    ) -> Result<Vec<Vec<GaussianWaypoint>>> {
        let batch = SceneBatch::inference(&[scene], &self.config)?;
        let mut g = Graph::with_params(store);
        let out = self.forward(&mut g, &batch)?;
        decode_gaussians(
            g.value(out),
            self.config.sigma_floor,
            self.config.traj_scale,
        )
    }

    /// Samples from given noise, `eps[s][n]` shared across time steps.
    pub fn sample_with_noise(
        &self,
        store: &ParamStore,
        scene: &Scene,
        eps: &[Vec<[f64; 2]>],
    ) -> Result<SceneSampleSet> {
        let heads = self.head_forward(store, scene)?;
        let trajectories = eps
            .iter()
            .map(|row| {
                if row.len() != heads.len() {
                    return Err(invalid("noise rows must cover every actor"));
                }
                Ok(heads
                    .iter()
                    .zip(row)
                    .map(|(h, e)| constant_noise_trajectory(h, *e))
                    .collect())
            })
            .collect::<Result<_>>()?;
        SceneSampleSet::new(scene, trajectories)
    }
}

impl Forecaster for IndependentHead {
    fn kind(&self) -> ModelKind {
        ModelKind::Independent
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.actor_enc.init(&mut store, &mut rng)?;
        self.head.init(&mut store, &mut rng)?;
        Ok(store)
    }

    fn loss(
        &self,
        g: &mut Graph,
        batch: &SceneBatch,
        _step: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(Var, LossParts)> {
        let nll = self.nll(g, batch)?;
        let inv = 1.0 / batch.num_scenes() as f64;
        let total = g.scale(nll, inv)?;
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
        let eps: Vec<Vec<[f64; 2]>> = (0..num_samples)
            .map(|s| {
                scene
                    .actors
                    .iter()
                    .map(|a| {
                        let e = standard_normal(&[2], &mut noise_rng(base, s, a.id));
                        [e.data()[0], e.data()[1]]
                    })
                    .collect()
            })
            .collect();
        self.sample_with_noise(store, scene, &eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, softplus};
    use crate::model::{train, TrainConfig};
    use crate::scenegen::random_scene;

    fn setup() -> (IndependentHead, Vec<Scene>) {
        let c = ModelConfig::tiny();
        let scenes = (0..6)
            .map(|i| {
                random_scene(
                    i,
                    1 + i as usize % 3,
                    c.history,
                    c.horizon,
                    &mut ChaCha8Rng::seed_from_u64(i),
                )
            })
            .collect();
        (IndependentHead::new(c).unwrap(), scenes)
    }

    #[test]
    fn zero_weights_emit_bias_gaussians() {
        let (m, scenes) = setup();
        let mut store = m.init_params(0).unwrap();
        store.map_values(|_, _| 0.0);
        store
            .get_mut("independent.head.2.bias")
            .unwrap()
            .data_mut()
            .fill(0.2);
        let heads = m.head_forward(&store, &scenes[2]).unwrap();
        let a = (softplus(0.2) + m.config.sigma_floor) * m.config.traj_scale;
        for w in heads.iter().flatten() {
            assert_eq!(w.mu, [2.0, 2.0]);
            assert!((w.chol[0][0] - a).abs() < 1e-12 && (w.chol[1][1] - a).abs() < 1e-12);
            assert_eq!(w.chol[1][0], 2.0);
        }
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let (m, scenes) = setup();
        let mut store = m.init_params(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        store.map_values(|_, v| v + rng.random_range(-0.05..0.05));
        let refs: Vec<&Scene> = scenes.iter().collect();
        let batch = SceneBatch::new(&refs, &m.config).unwrap();
        let eval = |s: &ParamStore| -> Result<(f64, crate::autodiff::Gradients)> {
            let mut g = Graph::with_params(s);
            let l = m.nll(&mut g, &batch)?;
            Ok((g.value(l).item(), g.backward(l)?))
        };
        let (_, grads) = eval(&store).unwrap();
        let r = gradcheck::check_params(&store, &grads, Some(8), |s| Ok(eval(s)?.0)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn nll_decreases_when_overfitting() {
        let (m, scenes) = setup();
        let out = train(
            &m,
            &scenes,
            &TrainConfig {
                steps: 200,
                batch_size: 6,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let first = out.curve[0].total;
        let last = out.curve.last().unwrap().total;
        assert!(last < first - 1.0, "{first} -> {last}");
    }

    #[test]
    fn shuffling_one_actors_noise_leaves_others_untouched() {
        let (m, scenes) = setup();
        let store = m.init_params(4).unwrap();
        let scene = &scenes[2];
        let n = scene.num_actors();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps: Vec<Vec<[f64; 2]>> = (0..6)
            .map(|_| {
                (0..n)
                    .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                    .collect()
            })
            .collect();
        let mut shuffled = eps.clone();
        let col: Vec<[f64; 2]> = eps.iter().map(|r| r[0]).rev().collect();
        for (row, e) in shuffled.iter_mut().zip(col) {
            row[0] = e;
        }
        let a = m.sample_with_noise(&store, scene, &eps).unwrap();
        let b = m.sample_with_noise(&store, scene, &shuffled).unwrap();
        for s in 0..6 {
            for k in 1..n {
                assert_eq!(a.trajectories[s][k], b.trajectories[s][k]);
            }
            assert_eq!(a.trajectories[s][0], b.trajectories[5 - s][0]);
        }
    }

    #[test]
    fn sampling_reproducible() {
        let (m, scenes) = setup();
        let store = m.init_params(4).unwrap();
        let a = m
            .sample(&store, &scenes[1], 4, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = m
            .sample(&store, &scenes[1], 4, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
        assert!(m
            .sample(&store, &scenes[1], 0, &mut ChaCha8Rng::seed_from_u64(1))
            .is_err());
    }
}

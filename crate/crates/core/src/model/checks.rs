//! Finite-difference checks of the composed model pieces on random tiny
//! instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::SceneBatch;
use super::config::ModelConfig;
use super::{Forecaster, Ilvm};
use crate::autodiff::gaussian::standard_normal;
use crate::autodiff::gradcheck::{check_entries, PrimitiveCheck};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scene::Scene;
use crate::scenegen::random_scene;
use crate::sim::{InteractionGraph, Sim, SimConfig};

/// Random entries probed per parameter tensor and instance.
const PROBES: usize = 2;

const COMPONENTS: [&str; 6] = [
    "sim",
    "actor_encoder",
    "prior",
    "encoder",
    "decoder",
    "loss",
];

pub fn component_names() -> Vec<&'static str> {
    COMPONENTS.to_vec()
}

/// Adds uniform(-0.05, 0.05) noise so no ReLU input sits exactly at zero.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    store.map_values(|_, v| v + rng.random_range(-0.05..0.05));
}

fn scenes(c: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<Scene> {
    let k = rng.random_range(1..=2);
    (0..k)
        .map(|i| {
            let n = rng.random_range(1..=3);
            random_scene(i, n, c.history, c.horizon, rng)
        })
        .collect()
}

fn weighted(g: &mut Graph, out: Var, w: &Tensor) -> Result<Var> {
    let wv = g.constant(w.clone())?;
    let p = g.mul(out, wv)?;
    g.sum(p)
}

fn check(
    store: &ParamStore,
    rng: &mut ChaCha8Rng,
    forward: impl Fn(&mut Graph) -> Result<Var>,
) -> Result<f64> {
    let shape = {
        let mut g = Graph::with_params(store);
        let out = forward(&mut g)?;
        g.value(out).shape().to_vec()
    };
    let n = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let grads = {
        let mut g = Graph::with_params(store);
        let out = forward(&mut g)?;
        let l = weighted(&mut g, out, &w)?;
        g.backward(l)?
    };
    // parameters outside the component's graph are not part of its function
    let mut entries = Vec::new();
    for name in grads.by_name.keys() {
        let len = store.get(name)?.len();
        entries.extend((0..PROBES.min(len)).map(|_| (name.clone(), rng.random_range(0..len))));
    }
    let loss = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let out = forward(&mut g)?;
        let l = weighted(&mut g, out, &w)?;
        Ok(g.value(l).item())
    };
    Ok(check_entries(store, &grads, &entries, loss)?.max_rel_error)
}

fn one(name: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let base = ModelConfig::tiny();
    if name == "sim" {
        let sim = Sim::new("sim", SimConfig::new(base.hidden_dim, 3))?;
        let mut store = ParamStore::new();
        sim.init(&mut store, rng)?;
        let n = rng.random_range(1..=5);
        let h: Vec<f64> = (0..n * base.hidden_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        store.insert("h", Tensor::matrix(n, base.hidden_dim, h)?)?;
        jitter(&mut store, rng);
        let scene = random_scene(0, n, 1, 1, rng);
        let graph = InteractionGraph::fully_connected(&scene.poses())?;
        return check(&store, rng, |g| {
            let h = g.param("h")?;
            sim.forward(g, &graph, h)
        });
    }
    let m = Ilvm::new(base)?;
    let mut store = m.init_params(rng.random())?;
    jitter(&mut store, rng);
    let sc = scenes(&m.config, rng);
    let refs: Vec<&Scene> = sc.iter().collect();
    let batch = SceneBatch::new(&refs, &m.config)?;
    let d = m.config.latent_dim;
    match name {
        "actor_encoder" => check(&store, rng, |g| m.features(g, &batch)),
        "prior" => check(&store, rng, |g| {
            let x = m.features(g, &batch)?;
            let p = m.prior_forward(g, &batch.graph, x)?;
            g.concat_cols(&[p.mu, p.log_sigma])
        }),
        "encoder" => check(&store, rng, |g| {
            let x = m.features(g, &batch)?;
            let q = m.encoder_forward(g, &batch, x)?;
            g.concat_cols(&[q.mu, q.log_sigma])
        }),
        "decoder" => {
            let z: Vec<f64> = (0..batch.num_nodes() * d)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            store.insert("z", Tensor::matrix(batch.num_nodes(), d, z)?)?;
            check(&store, rng, |g| {
                let x = m.features(g, &batch)?;
                let z = g.param("z")?;
                m.decode(g, &batch.graph, x, z)
            })
        }
        _ => {
            let eps = standard_normal(&[batch.num_nodes(), d], rng);
            let beta = rng.random_range(0.01..1.0);
            check(&store, rng, |g| {
                Ok(m.forecast_loss_with_noise(g, &batch, beta, eps.clone())?.0)
            })
        }
    }
}

/// Checks the SIM, actor encoder, prior, posterior encoder, decoder and
/// the full training loss of the complete model on `instances` random tiny
/// instances each.
pub fn component_suite(instances: usize, seed: u64) -> Result<Vec<PrimitiveCheck>> {
    COMPONENTS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                worst = worst.max(one(name, &mut rng)?);
            }
            Ok(PrimitiveCheck {
                name,
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}

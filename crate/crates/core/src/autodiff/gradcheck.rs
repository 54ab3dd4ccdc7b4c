//! Central finite-difference oracle for gradient checks.
//!
//! The oracle only evaluates the forward function; it never touches the
//! reverse pass it is compared against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gaussian::{kl_diag_gaussian, reparam_with_noise, GaussianVars};
use super::graph::{Gradients, Graph, Var};
use super::nn::{Activation, GruCell, Mlp};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Smaller steps tried when the default step disagrees: a ReLU or max kink
/// lying within one step of the probe point spoils the central difference
/// even though the function is differentiable at the point itself.
const REFINE_STEPS: [f64; 2] = [1e-6, 1e-7];
const REFINE_ABOVE: f64 = 1e-6;

/// Denominator floor for the relative error, so that gradients near zero
/// are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` with central differences of `loss` over every
/// scalar of every parameter (or at most `max_per_param` evenly spaced
/// entries per parameter, when given).
pub fn check_params(
    store: &ParamStore,
    analytic: &Gradients,
    max_per_param: Option<usize>,
    loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    for (name, t) in store.iter() {
        let len = t.len();
        let stride = match max_per_param {
            Some(k) if k > 0 && len > k => len.div_ceil(k),
            _ => 1,
        };
        entries.extend((0..len).step_by(stride).map(|i| (name.clone(), i)));
    }
    check_entries(store, analytic, &entries, loss)
}

/// [`check_params`] over an explicit list of `(parameter, flat index)`.
pub fn check_entries(
    store: &ParamStore,
    analytic: &Gradients,
    entries: &[(String, usize)],
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (name, idx) in entries {
        let idx = *idx;
        let a = analytic.get(name).map_or(0.0, |t| t.data()[idx]);
        let mut err = relative_error(a, central(&mut probe, name, idx, FD_STEP, &mut loss)?);
        for h in REFINE_STEPS {
            if err <= REFINE_ABOVE {
                break;
            }
            err = err.min(relative_error(
                a,
                central(&mut probe, name, idx, h, &mut loss)?,
            ));
        }
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), idx));
        }
    }
    Ok(report)
}

fn central(
    probe: &mut ParamStore,
    name: &str,
    idx: usize,
    h: f64,
    loss: &mut impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let orig = probe.get(name)?.data()[idx];
    probe.get_mut(name)?.data_mut()[idx] = orig + h;
    let up = loss(probe)?;
    probe.get_mut(name)?.data_mut()[idx] = orig - h;
    let down = loss(probe)?;
    probe.get_mut(name)?.data_mut()[idx] = orig;
    Ok((up - down) / (2.0 * h))
}

/// Outcome of one primitive over many random instances.
#[derive(Clone, Debug)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

type Build = fn(&mut ChaCha8Rng, &mut ParamStore) -> Result<()>;
type Forward = fn(&mut Graph, &ParamStore) -> Result<Var>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("sized")
}

fn put(store: &mut ParamStore, name: &str, t: Tensor) -> Result<()> {
    store.insert(name, t)
}

fn two(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
    put(store, "a", uniform(rng, &[m, n], -2.0, 2.0))?;
    put(store, "b", uniform(rng, &[m, n], -2.0, 2.0))
}

fn one(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
    put(store, "a", uniform(rng, &[m, n], -3.0, 3.0))
}

fn positive(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
    put(store, "a", uniform(rng, &[m, n], 0.2, 3.0))
}

fn matmul_pair(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, k, n) = (
        rng.random_range(1..6),
        rng.random_range(1..6),
        rng.random_range(1..6),
    );
    put(store, "a", uniform(rng, &[m, k], -1.0, 1.0))?;
    put(store, "b", uniform(rng, &[k, n], -1.0, 1.0))?;
    put(store, "c", uniform(rng, &[n], -1.0, 1.0))
}

fn divisor(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
    put(store, "a", uniform(rng, &[m, n], -2.0, 2.0))?;
    let mut b = uniform(rng, &[m, n], 0.3, 2.0);
    for v in b.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    put(store, "b", b)
}

fn rows(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, n) = (rng.random_range(2..7), rng.random_range(1..5));
    put(store, "a", uniform(rng, &[m, n], -2.0, 2.0))?;
    let k = rng.random_range(1..4);
    put(store, "b", uniform(rng, &[k, n], -2.0, 2.0))
}

fn gaussians(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (m, n) = (rng.random_range(1..4), rng.random_range(1..5));
    for name in ["a", "b", "c", "d"] {
        put(store, name, uniform(rng, &[m, n], -1.0, 1.0))?;
    }
    Ok(())
}

fn gru(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let (i, h, b) = (
        rng.random_range(1..4),
        rng.random_range(1..5),
        rng.random_range(1..4),
    );
    let cell = GruCell::new("gru", i, h)?;
    cell.init(store, rng)?;
    store.map_values(|_, v| v + rng.random_range(-0.3..0.3));
    put(store, "h", uniform(rng, &[b, h], -1.0, 1.0))?;
    put(store, "x", uniform(rng, &[b, i], -1.0, 1.0))
}

fn mlp(rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Result<()> {
    let dims = [
        rng.random_range(1..5),
        rng.random_range(1..6),
        rng.random_range(1..6),
        rng.random_range(1..4),
    ];
    let net = Mlp::new("mlp", &dims, Activation::Relu)?;
    net.init(store, rng)?;
    store.map_values(|_, v| v + rng.random_range(-0.3..0.3));
    let b = rng.random_range(1..5);
    put(store, "x", uniform(rng, &[b, dims[0]], -1.0, 1.0))
}

fn segments(store: &ParamStore) -> Result<(Vec<usize>, usize)> {
    let m = store.get("a")?.rows();
    // deterministic pseudo-random assignment with one empty segment
    let seg = (0..m).map(|r| (r * 7 + 3) % (m / 2 + 1)).collect();
    Ok((seg, m / 2 + 2))
}

fn p2(g: &mut Graph) -> Result<(Var, Var)> {
    Ok((g.param("a")?, g.param("b")?))
}

const CASES: &[(&str, Build, Forward)] = &[
    ("matmul", matmul_pair, |g, _| {
        let (a, b) = p2(g)?;
        g.matmul(a, b)
    }),
    ("add_row", matmul_pair, |g, _| {
        let (a, b) = p2(g)?;
        let c = g.param("c")?;
        let ab = g.matmul(a, b)?;
        g.add_row(ab, c)
    }),
    ("add", two, |g, _| {
        let (a, b) = p2(g)?;
        g.add(a, b)
    }),
    ("sub", two, |g, _| {
        let (a, b) = p2(g)?;
        g.sub(a, b)
    }),
    ("mul", two, |g, _| {
        let (a, b) = p2(g)?;
        g.mul(a, b)
    }),
    ("div", divisor, |g, _| {
        let (a, b) = p2(g)?;
        g.div(a, b)
    }),
    ("affine_scalar", one, |g, _| {
        let a = g.param("a")?;
        g.affine_scalar(a, -1.7, 0.4)
    }),
    ("relu", one, |g, _| {
        let a = g.param("a")?;
        g.relu(a)
    }),
    ("tanh", one, |g, _| {
        let a = g.param("a")?;
        g.tanh(a)
    }),
    ("sigmoid", one, |g, _| {
        let a = g.param("a")?;
        g.sigmoid(a)
    }),
    ("exp", one, |g, _| {
        let a = g.param("a")?;
        g.exp(a)
    }),
    ("log", positive, |g, _| {
        let a = g.param("a")?;
        g.log(a)
    }),
    ("softplus", one, |g, _| {
        let a = g.param("a")?;
        g.softplus(a)
    }),
    ("square", one, |g, _| {
        let a = g.param("a")?;
        g.square(a)
    }),
    ("concat_cols", two, |g, _| {
        let (a, b) = p2(g)?;
        g.concat_cols(&[a, b, a])
    }),
    ("concat_rows", rows, |g, _| {
        let (a, b) = p2(g)?;
        g.concat_rows(&[b, a])
    }),
    ("slice_cols", one, |g, s| {
        let a = g.param("a")?;
        let n = s.get("a")?.cols();
        g.slice_cols(a, n / 2, n)
    }),
    ("gather_rows", rows, |g, s| {
        let a = g.param("a")?;
        let m = s.get("a")?.rows();
        let idx: Vec<usize> = (0..m + 2).map(|k| (k * 5 + 1) % m).collect();
        g.gather_rows(a, &idx)
    }),
    ("segment_max", rows, |g, s| {
        let a = g.param("a")?;
        let (seg, n) = segments(s)?;
        g.segment_max(a, &seg, n)
    }),
    ("max_over_rows", rows, |g, _| {
        let a = g.param("a")?;
        g.max_over_rows(a)
    }),
    ("sum", one, |g, _| {
        let a = g.param("a")?;
        g.sum(a)
    }),
    ("huber_sum", one, |g, _| {
        let a = g.param("a")?;
        g.huber_sum(a, 1.0)
    }),
    ("reshape", one, |g, s| {
        let a = g.param("a")?;
        let n = s.get("a")?.len();
        g.reshape(a, vec![n])
    }),
    ("kl_diag_gaussian", gaussians, |g, _| {
        let q = GaussianVars {
            mu: g.param("a")?,
            log_sigma: g.param("b")?,
        };
        let p = GaussianVars {
            mu: g.param("c")?,
            log_sigma: g.param("d")?,
        };
        kl_diag_gaussian(g, q, p)
    }),
    ("reparam", gaussians, |g, s| {
        let q = GaussianVars {
            mu: g.param("a")?,
            log_sigma: g.param("b")?,
        };
        let shape = s.get("a")?.shape().to_vec();
        let n = s.get("a")?.len();
        let eps = Tensor::new(
            shape,
            (0..n).map(|k| 1.5 * (k as f64 * 2.3 + 0.7).sin()).collect(),
        )?;
        reparam_with_noise(g, q, eps)
    }),
    ("gru_cell", gru, |g, s| {
        let x = g.param("x")?;
        let h = g.param("h")?;
        GruCell::new("gru", s.get("x")?.cols(), s.get("h")?.cols())?.forward(g, h, x)
    }),
    ("mlp", mlp, |g, s| {
        let dims: Vec<usize> = (0..3)
            .map(|l| s.get(&format!("mlp.{l}.weight")).map(|w| w.rows()))
            .chain(std::iter::once(s.get("mlp.2.weight").map(|w| w.cols())))
            .collect::<Result<_>>()?;
        let x = g.param("x")?;
        Mlp::new("mlp", &dims, Activation::Relu)?.forward(g, x)
    }),
];

/// Names of the primitives covered by [`primitive_suite`].
pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.0).collect()
}

/// Checks every differentiable primitive (and the GRU and MLP layers) on
/// `instances` random inputs each. The scalar under test is
/// `sum(w * f(inputs))` with fixed random weights `w`, so that the upstream
/// gradient is not uniform.
pub fn primitive_suite(instances: usize, seed: u64) -> Result<Vec<PrimitiveCheck>> {
    CASES
        .iter()
        .enumerate()
        .map(|(k, (name, build, forward))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 0x9E37_79B9));
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let mut store = ParamStore::new();
                build(&mut rng, &mut store)?;
                let out_shape = {
                    let mut g = Graph::with_params(&store);
                    let out = forward(&mut g, &store)?;
                    g.value(out).shape().to_vec()
                };
                let w = uniform(&mut rng, &out_shape, -1.0, 1.0);
                let eval = |s: &ParamStore| -> Result<(f64, Gradients)> {
                    let mut g = Graph::with_params(s);
                    let out = forward(&mut g, s)?;
                    let wv = g.constant(w.clone())?;
                    let prod = g.mul(out, wv)?;
                    let l = g.sum(prod)?;
                    Ok((g.value(l).item(), g.backward(l)?))
                };
                let (_, grads) = eval(&store)?;
                let report = check_params(&store, &grads, None, |s| Ok(eval(s)?.0))?;
                worst = worst.max(report.max_rel_error);
            }
            Ok(PrimitiveCheck {
                name,
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}

//! Diagonal Gaussians: closed-form KL and the reparameterized sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{shape, Result};

/// Detached diagonal Gaussian. Rows index independent distributions
/// (one per actor); columns are latent dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl DiagGaussian {
    pub fn new(mu: Tensor, log_sigma: Tensor) -> Result<Self> {
        if mu.shape() != log_sigma.shape() {
            return Err(shape(
                "diag_gaussian",
                format!("mu {:?} vs log_sigma {:?}", mu.shape(), log_sigma.shape()),
            ));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn standard(shape: &[usize]) -> Self {
        Self {
            mu: Tensor::zeros(shape),
            log_sigma: Tensor::zeros(shape),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.data().iter().map(|v| v.exp()).collect()
    }

    /// Rows `idx` of a batched distribution.
    pub fn rows(&self, idx: &[usize]) -> Self {
        let pick = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| t.row(i).to_vec()).collect();
            Tensor::from_rows(&rows).expect("rows share width")
        };
        Self {
            mu: pick(&self.mu),
            log_sigma: pick(&self.log_sigma),
        }
    }

    /// `mu + sigma * eps` for a given noise tensor.
    pub fn reparam_with(&self, eps: &Tensor) -> Result<Tensor> {
        if eps.len() != self.mu.len() {
            return Err(shape("reparam", "noise size"));
        }
        let data = self
            .mu
            .data()
            .iter()
            .zip(self.log_sigma.data())
            .zip(eps.data())
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect();
        Tensor::new(self.mu.shape().to_vec(), data)
    }
}

/// Graph-bound diagonal Gaussian.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_sigma: Var,
}

impl GaussianVars {
    pub fn detach(&self, g: &Graph) -> DiagGaussian {
        DiagGaussian {
            mu: g.value(self.mu).clone(),
            log_sigma: g.value(self.log_sigma).clone(),
        }
    }

    pub fn constant(g: &mut Graph, d: &DiagGaussian) -> Result<Self> {
        Ok(Self {
            mu: g.constant(d.mu.clone())?,
            log_sigma: g.constant(d.log_sigma.clone())?,
        })
    }
}

/// `KL(q || p)` summed over every element.
pub fn kl_diag_gaussian(g: &mut Graph, q: GaussianVars, p: GaussianVars) -> Result<Var> {
    let (qs, ps) = (
        g.value(q.mu).shape().to_vec(),
        g.value(p.mu).shape().to_vec(),
    );
    if qs != ps
        || g.value(q.log_sigma).shape() != qs.as_slice()
        || g.value(p.log_sigma).shape() != ps.as_slice()
    {
        return Err(shape("kl_diag_gaussian", format!("q {qs:?} vs p {ps:?}")));
    }
    // lsp - lsq + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
    let dls = g.sub(q.log_sigma, p.log_sigma)?;
    let two_dls = g.scale(dls, 2.0)?;
    let var_ratio = g.exp(two_dls)?;
    let dmu = g.sub(q.mu, p.mu)?;
    let dmu2 = g.square(dmu)?;
    let neg_two_lsp = g.scale(p.log_sigma, -2.0)?;
    let inv_var_p = g.exp(neg_two_lsp)?;
    let mahal = g.mul(dmu2, inv_var_p)?;
    let quad = g.add(var_ratio, mahal)?;
    let half_quad = g.affine_scalar(quad, 0.5, -0.5)?;
    let terms = g.sub(half_quad, dls)?;
    g.sum(terms)
}

/// Closed-form KL on detached values.
pub fn kl_value(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.mu.shape() != p.mu.shape() {
        return Err(shape("kl_value", "dim mismatch"));
    }
    let mut kl = 0.0;
    for k in 0..q.mu.len() {
        let (mq, lq) = (q.mu.data()[k], q.log_sigma.data()[k]);
        let (mp, lp) = (p.mu.data()[k], p.log_sigma.data()[k]);
        kl += lp - lq + ((2.0 * lq).exp() + (mq - mp).powi(2)) / (2.0 * (2.0 * lp).exp()) - 0.5;
    }
    Ok(kl)
}

/// Standard-normal noise of the given shape.
pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized by construction")
}

/// `z = mu + exp(log_sigma) * eps` with `eps ~ N(0, I)`; gradients reach
/// both `mu` and `log_sigma`.
pub fn reparam_sample<R: Rng + ?Sized>(g: &mut Graph, d: GaussianVars, rng: &mut R) -> Result<Var> {
    let eps = standard_normal(g.value(d.mu).shape(), rng);
    reparam_with_noise(g, d, eps)
}

pub fn reparam_with_noise(g: &mut Graph, d: GaussianVars, eps: Tensor) -> Result<Var> {
    if eps.shape() != g.value(d.mu).shape() {
        return Err(shape("reparam_sample", "noise shape"));
    }
    let e = g.constant(eps)?;
    let sigma = g.exp(d.log_sigma)?;
    let scaled = g.mul(sigma, e)?;
    g.add(d.mu, scaled)
}

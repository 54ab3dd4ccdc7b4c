//! Per-waypoint bivariate Gaussian output heads and the constant-noise
//! sampler.
//!
//! A head emits five numbers per waypoint, `(mu_x, mu_y, a_raw, c, b_raw)`,
//! in units of meters divided by `traj_scale`. The Cholesky factor of the
//! covariance is `L = [[a, 0], [c, b]]` with `a = softplus(a_raw) + floor`
//! and `b = softplus(b_raw) + floor`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Graph, Tensor, Var};
use crate::error::{shape, Result};
use crate::geometry::Point;

pub const GAUSSIAN_PARAMS: usize = 5;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianWaypoint {
    pub mu: Point,
    /// Lower-triangular Cholesky factor, row-major `[[a, 0], [c, b]]`.
    pub chol: [[f64; 2]; 2],
}

impl GaussianWaypoint {
    pub fn sample(&self, eps: [f64; 2]) -> Point {
        let l = &self.chol;
        [
            self.mu[0] + l[0][0] * eps[0],
            self.mu[1] + l[1][0] * eps[0] + l[1][1] * eps[1],
        ]
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [[a, _], [c, b]] = self.chol;
        [[a * a, a * c], [a * c, c * c + b * b]]
    }

    /// Negative log density of `y`.
    pub fn nll(&self, y: Point) -> f64 {
        let [[a, _], [c, b]] = self.chol;
        let w1 = (y[0] - self.mu[0]) / a;
        let w2 = (y[1] - self.mu[1] - c * w1) / b;
        0.5 * (w1 * w1 + w2 * w2) + a.ln() + b.ln() + LN_2PI
    }
}

/// Summed negative log-likelihood of `target [B x 2T]` (same units as the
/// head) under the head output `out [B x 5T]`.
pub fn gaussian_nll(g: &mut Graph, out: Var, target: &Tensor, floor: f64) -> Result<Var> {
    let (b, w) = g.value(out).dims2();
    let (tb, tw) = target.dims2();
    if w % GAUSSIAN_PARAMS != 0 || tb != b || tw * GAUSSIAN_PARAMS != w * 2 {
        return Err(shape(
            "gaussian_nll",
            format!(
                "head {:?} vs target {:?}",
                g.value(out).shape(),
                target.shape()
            ),
        ));
    }
    let steps = w / GAUSSIAN_PARAMS;
    let flat = g.reshape(out, vec![b * steps, GAUSSIAN_PARAMS])?;
    let y = g.constant(target.clone().reshape(vec![b * steps, 2])?)?;
    let col = |g: &mut Graph, v: Var, k: usize| g.slice_cols(v, k, k + 1);
    let (mx, my) = (col(g, flat, 0)?, col(g, flat, 1)?);
    let (ar, c, br) = (col(g, flat, 2)?, col(g, flat, 3)?, col(g, flat, 4)?);
    let (yx, yy) = (col(g, y, 0)?, col(g, y, 1)?);
    let a = g.softplus(ar)?;
    let a = g.affine_scalar(a, 1.0, floor)?;
    let bb = g.softplus(br)?;
    let bb = g.affine_scalar(bb, 1.0, floor)?;
    let r1 = g.sub(yx, mx)?;
    let r2 = g.sub(yy, my)?;
    let w1 = g.div(r1, a)?;
    let cw = g.mul(c, w1)?;
    let r2c = g.sub(r2, cw)?;
    let w2 = g.div(r2c, bb)?;
    let q1 = g.square(w1)?;
    let q2 = g.square(w2)?;
    let q = g.add(q1, q2)?;
    let half_q = g.affine_scalar(q, 0.5, LN_2PI)?;
    let la = g.log(a)?;
    let lb = g.log(bb)?;
    let logdet = g.add(la, lb)?;
    let per = g.add(half_q, logdet)?;
    g.sum(per)
}

/// Decodes head output rows into per-actor waypoint Gaussians, multiplying
/// means and factors by `scale`.
pub fn decode_gaussians(
    out: &Tensor,
    floor: f64,
    scale: f64,
) -> Result<Vec<Vec<GaussianWaypoint>>> {
    let (b, w) = out.dims2();
    if w % GAUSSIAN_PARAMS != 0 {
        return Err(shape("decode_gaussians", format!("width {w}")));
    }
    Ok((0..b)
        .map(|i| {
            out.row(i)
                .chunks(GAUSSIAN_PARAMS)
                .map(|p| GaussianWaypoint {
                    mu: [p[0] * scale, p[1] * scale],
                    chol: [
                        [(softplus(p[2]) + floor) * scale, 0.0],
                        [p[3] * scale, (softplus(p[4]) + floor) * scale],
                    ],
                })
                .collect()
        })
        .collect())
}

/// One trajectory from per-waypoint Gaussians with a single noise vector
/// shared across all time steps.
pub fn constant_noise_trajectory(head: &[GaussianWaypoint], eps: [f64; 2]) -> Vec<Point> {
    head.iter().map(|w| w.sample(eps)).collect()
}

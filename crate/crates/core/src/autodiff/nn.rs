//! Parameterized layers built on [`Graph`] primitives.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{xavier_uniform, ParamStore};
use super::tensor::Tensor;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Stack of affine layers `dims[0] -> dims[1] -> ... -> dims[last]` with an
/// activation between layers and none after the last one.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(invalid(format!(
                "mlp dims must have >= 2 positive entries, got {dims:?}"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            dims: dims.to_vec(),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for l in 0..self.num_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            store.insert(self.weight_name(l), xavier_uniform(i, o, rng))?;
            store.insert(self.bias_name(l), Tensor::zeros(&[o]))?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.num_layers() {
            let w = g.param(&self.weight_name(l))?;
            let b = g.param(&self.bias_name(l))?;
            h = g.affine(h, w, b)?;
            if l + 1 < self.num_layers() {
                h = match self.activation {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                };
            }
        }
        Ok(h)
    }
}

/// Gated recurrent cell, reset-before-candidate form:
///
/// ```text
/// z  = sigmoid(a Wz + h Uz + bz)
/// r  = sigmoid(a Wr + h Ur + br)
/// n~ = tanh(a Wn + (r * h) Un + bn)
/// h' = (1 - z) * n~ + z * h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    prefix: String,
    input_dim: usize,
    hidden_dim: usize,
}

pub const GRU_GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(invalid("gru dims must be positive"));
        }
        Ok(Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Name of a gate tensor: `kind` is `w` (input), `u` (hidden) or `b`.
    pub fn name(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for gate in GRU_GATES {
            store.insert(
                self.name("w", gate),
                xavier_uniform(self.input_dim, self.hidden_dim, rng),
            )?;
            store.insert(
                self.name("u", gate),
                xavier_uniform(self.hidden_dim, self.hidden_dim, rng),
            )?;
            store.insert(self.name("b", gate), Tensor::zeros(&[self.hidden_dim]))?;
        }
        Ok(())
    }

    /// One update for a batch of rows: `h [B x H]`, `a [B x A]`.
    pub fn forward(&self, g: &mut Graph, h: Var, a: Var) -> Result<Var> {
        let (hr, hc) = g.value(h).dims2();
        let (ar, ac) = g.value(a).dims2();
        if hc != self.hidden_dim || ac != self.input_dim || hr != ar {
            return Err(crate::error::shape(
                "gru_cell",
                format!(
                    "h {:?}, a {:?} for input {} hidden {}",
                    g.value(h).shape(),
                    g.value(a).shape(),
                    self.input_dim,
                    self.hidden_dim
                ),
            ));
        }
        let z = self.gate(g, "z", a, h, Gate::Sigmoid)?;
        let r = self.gate(g, "r", a, h, Gate::Sigmoid)?;
        let rh = g.mul(r, h)?;
        let n = self.gate(g, "n", a, rh, Gate::Tanh)?;
        let one_minus_z = g.one_minus(z)?;
        let left = g.mul(one_minus_z, n)?;
        let right = g.mul(z, h)?;
        g.add(left, right)
    }

    fn gate(&self, g: &mut Graph, gate: &str, a: Var, h: Var, act: Gate) -> Result<Var> {
        let w = g.param(&self.name("w", gate))?;
        let u = g.param(&self.name("u", gate))?;
        let b = g.param(&self.name("b", gate))?;
        let aw = g.matmul(a, w)?;
        let hu = g.matmul(h, u)?;
        let s = g.add(aw, hu)?;
        let s = g.add_row(s, b)?;
        match act {
            Gate::Sigmoid => g.sigmoid(s),
            Gate::Tanh => g.tanh(s),
        }
    }
}

enum Gate {
    Sigmoid,
    Tanh,
}

//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and
//! accumulates `d loss / d node` for every node that depends on a
//! parameter or a gradient-tracked leaf. A graph is single-use: the
//! saved activations are released by `backward`, and building a new
//! graph is the only way to differentiate again.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{gemm, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{shape, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    /// Saved argmax row per output element; `usize::MAX` for empty segments.
    SegmentMax(Var, Vec<usize>),
    Sum(Var),
    Huber(Var, f64),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Holds an optional reference to the parameter
/// store that [`Graph::param`] reads from.
pub struct Graph<'a> {
    nodes: Vec<Node>,
    store: Option<&'a ParamStore>,
    param_vars: BTreeMap<String, Var>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

/// Parameter gradients produced by [`Graph::backward`], keyed by name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Global L2 norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.by_name.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            param_vars: BTreeMap::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        self.check_live()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Gradient-tracked leaf (readable through [`Graph::grad`]).
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "leaf")
    }

    /// Leaf bound to a named parameter of the attached store. Repeated
    /// calls with the same name return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let store = self
            .store
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Leaf, true, "param")?;
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2();
        let (k2, n) = bv.dims2();
        if bv.shape().len() != 2 || k != k2 {
            return Err(shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), bv.data(), &mut out);
        let shp = if av.shape().len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(shp, out)?, Op::MatMul(a, b), ng, "matmul")
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = av.dims2();
        if bv.len() != n {
            return Err(shape(
                "add_row",
                format!("{:?} + row {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = av.data().to_vec();
        for r in 0..m {
            for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(bias);
        self.push(t, Op::AddRow(a, bias), ng, "add_row")
    }

    /// `x W + b` with `W [in x out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.value(a);
        let out = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let ng = self.ng(a);
        self.push(t, op, ng, name)
    }

    /// `mul * a + add`, elementwise.
    pub fn affine_scalar(&mut self, a: Var, mul: f64, add: f64) -> Result<Var> {
        self.unary(a, "affine_scalar", |x| mul * x + add, Op::Affine(a, mul))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.affine_scalar(a, c, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.affine_scalar(a, -1.0, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "softplus", softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    /// Concatenates along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape("concat_cols", "no inputs"));
        }
        let rows = self.value(parts[0]).rows();
        let all_1d = parts.iter().all(|&p| self.value(p).shape().len() == 1);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(shape("concat_cols", format!("row count {r} vs {rows}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let shp = if all_1d {
            vec![total]
        } else {
            vec![rows, total]
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::new(shp, out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
            "concat_cols",
        )
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape("concat_rows", "no inputs"));
        }
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if c != cols {
                return Err(shape("concat_rows", format!("col count {c} vs {cols}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let t = Tensor::matrix(rows, cols, out)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), ng, "concat_rows")
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if start > end || end > n {
            return Err(shape("slice_cols", format!("{start}..{end} of {n}")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&av.row(r)[start..end]);
        }
        let shp = if av.shape().len() == 1 {
            vec![w]
        } else {
            vec![m, w]
        };
        let ng = self.ng(a);
        self.push(
            Tensor::new(shp, out)?,
            Op::SliceCols(a, start),
            ng,
            "slice_cols",
        )
    }

    /// Selects rows by index (repetition allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(shape("gather_rows", format!("row {i} of {m}")));
            }
            out.extend_from_slice(av.row(i));
        }
        let ng = self.ng(a);
        let t = Tensor::matrix(idx.len(), n, out)?;
        self.push(t, Op::GatherRows(a, idx.to_vec()), ng, "gather_rows")
    }

    /// Feature-wise max over the rows assigned to each segment.
    /// `segment[r]` names the output row of input row `r`. Segments with no
    /// rows produce zeros.
    pub fn segment_max(&mut self, a: Var, segment: &[usize], num_segments: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if segment.len() != m {
            return Err(shape(
                "segment_max",
                format!("{} segment ids for {m} rows", segment.len()),
            ));
        }
        let mut out = vec![0.0; num_segments * n];
        let mut arg = vec![usize::MAX; num_segments * n];
        for (r, &s) in segment.iter().enumerate() {
            if s >= num_segments {
                return Err(shape(
                    "segment_max",
                    format!("segment {s} of {num_segments}"),
                ));
            }
            let row = av.row(r);
            for j in 0..n {
                let k = s * n + j;
                if arg[k] == usize::MAX || row[j] > out[k] {
                    out[k] = row[j];
                    arg[k] = r;
                }
            }
        }
        let ng = self.ng(a);
        let t = Tensor::matrix(num_segments, n, out)?;
        self.push(t, Op::SegmentMax(a, arg), ng, "segment_max")
    }

    /// Feature-wise max over all rows, returned as a vector. An empty set
    /// yields zeros.
    pub fn max_over_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).rows();
        let seg = vec![0; m];
        let out = self.segment_max(a, &seg, 1)?;
        let n = self.value(out).cols();
        self.reshape(out, vec![n])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng, "sum")
    }

    /// Summed Huber penalty: `0.5 r^2` for `|r| <= delta`, else
    /// `delta (|r| - 0.5 delta)`.
    pub fn huber_sum(&mut self, a: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(crate::error::invalid(format!(
                "huber delta must be > 0, got {delta}"
            )));
        }
        let s = self.value(a).data().iter().map(|&r| huber(r, delta)).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Huber(a, delta), ng, "huber")
    }

    pub fn reshape(&mut self, a: Var, shp: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shp)?;
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng, "reshape")
    }

    /// Reverse pass from a scalar `loss`. Returns gradients of every
    /// parameter reached; leaf gradients stay queryable via [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_live()?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let count = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..count).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: op_name(&self.nodes[i].op),
                    });
                }
            }
        }

        let mut out = Gradients::default();
        for (name, v) in &self.param_vars {
            let shp = self.nodes[v.0].value.shape().to_vec();
            let data = grads[v.0]
                .clone()
                .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
            out.by_name.insert(name.clone(), Tensor::new(shp, data)?);
        }
        self.grads = grads;
        self.consumed = true;
        // Release saved activations; gradients are retained.
        for n in &mut self.nodes {
            n.value = Tensor::zeros(&[0]);
            n.op = Op::Leaf;
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.cols();
                if self.ng(*a) {
                    let ga = acc(grads, *a, m * k);
                    gemm_nt_acc(m, n, k, g, bv.data(), ga);
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, k * n);
                    gemm_tn_acc(k, m, n, av.data(), g, gb);
                }
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                if self.ng(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    add_into(acc(grads, *b, g.len()), g);
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, g.len());
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    let ga = acc(grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                if self.ng(*a) {
                    let ga = acc(grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] / bv[k];
                    }
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] -= g[k] * y[k] / bv[k];
                    }
                }
            }
            Op::Affine(a, mul) => {
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * mul;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    if x[k] > 0.0 {
                        ga[k] += g[k];
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
            Op::Exp(a) => {
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k];
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] / x[k];
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += g[k] * sigmoid(x[k]);
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    ga[k] += 2.0 * g[k] * x[k];
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.ng(p) {
                        let gp = acc(grads, p, rows * c);
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * c..(r + 1) * c],
                                &g[r * total + off..r * total + off + c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.ng(p) {
                        add_into(acc(grads, p, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2();
                let w = node.value.cols();
                let ga = acc(grads, *a, m * n);
                for r in 0..m {
                    add_into(
                        &mut ga[r * n + start..r * n + start + w],
                        &g[r * w..(r + 1) * w],
                    );
                }
            }
            Op::GatherRows(a, idx) => {
                let (m, n) = self.value(*a).dims2();
                let ga = acc(grads, *a, m * n);
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut ga[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::SegmentMax(a, arg) => {
                let (m, n) = self.value(*a).dims2();
                let ga = acc(grads, *a, m * n);
                for (k, &r) in arg.iter().enumerate() {
                    if r != usize::MAX {
                        ga[r * n + k % n] += g[k];
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                let ga = acc(grads, *a, len);
                ga.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Huber(a, delta) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, x.len());
                for k in 0..x.len() {
                    ga[k] += g[0] * x[k].clamp(-delta, *delta);
                }
            }
            Op::Reshape(a) => {
                add_into(acc(grads, *a, g.len()), g);
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::AddRow(..) => "add_row",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Affine(..) => "affine_scalar",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Exp(_) => "exp",
        Op::Log(_) => "log",
        Op::Softplus(_) => "softplus",
        Op::Square(_) => "square",
        Op::ConcatCols(_) => "concat_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::SegmentMax(..) => "segment_max",
        Op::Sum(_) => "sum",
        Op::Huber(..) => "huber",
        Op::Reshape(_) => "reshape",
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.5, -2.0])).unwrap();
        let w = g
            .constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let b = g.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, -2.0]);
    }

    #[test]
    fn affine_hand_multiply() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let w = g
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let b = g.constant(Tensor::vector(vec![0.5, -0.5])).unwrap();
        let y = g.affine(x, w, b).unwrap();
        // row-vector convention: [1*1 + 2*3, 1*2 + 2*4] + b
        assert_eq!(g.value(y).data(), &[7.5, 9.5]);
        assert_eq!(g.value(y).shape(), &[2]);
    }

    #[test]
    fn set_max_featurewise() {
        let mut g = Graph::new();
        let s = g
            .constant(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap())
            .unwrap();
        let m = g.max_over_rows(s).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 5.0]);
    }

    #[test]
    fn empty_segment_is_zero() {
        let mut g = Graph::new();
        let s = g
            .constant(Tensor::from_rows(&[vec![-1.0, -5.0]]).unwrap())
            .unwrap();
        let m = g.segment_max(s, &[1], 2).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0, -1.0, -5.0]);
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.3, -1.0, 2.0])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn chain_rule_square_of_product() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(2.0)).unwrap();
        let x = g.constant(Tensor::scalar(3.0)).unwrap();
        let wx = g.mul(w, x).unwrap();
        let l = g.square(wx).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[36.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
        assert!(matches!(
            g.constant(Tensor::scalar(1.0)),
            Err(Error::GraphConsumed)
        ));
    }

    #[test]
    fn shape_mismatch_and_nonfinite() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        let w = g
            .constant(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap())
            .unwrap();
        assert!(matches!(g.matmul(a, w), Err(Error::Shape { .. })));
        let z = g.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!(matches!(g.log(z), Err(Error::NonFinite { .. })));
        let big = g.constant(Tensor::vector(vec![1000.0, 1.0])).unwrap();
        assert!(matches!(g.exp(big), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn huber_branches() {
        for (r, want) in [(0.0, 0.0), (0.5, 0.125), (3.0, 2.5), (-3.0, 2.5)] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(vec![r])).unwrap();
            let h = g.huber_sum(x, 1.0).unwrap();
            assert_eq!(g.value(h).item(), want);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0])).unwrap();
        assert!(g.huber_sum(x, 0.0).is_err());
        assert!(g.huber_sum(x, -1.0).is_err());
    }
}

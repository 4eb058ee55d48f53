//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every forward operation in execution order together with
//! its output. [`Tape::backward`] walks the records in reverse, accumulating
//! adjoints, and returns one gradient per parameter of the borrowed
//! [`ParamStore`]. Parameters that the loss does not reach get a zero gradient.

use crate::error::{invalid, DmtError, Result};
use crate::layers::conv::{conv2d_valid, conv2d_valid_backward};
use crate::layers::BiasMode;
use crate::tensor::Mat;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn get(&self, idx: usize) -> &Mat {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.values[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values
            .iter()
            .map(|v| Mat::zeros(v.rows(), v.cols()))
            .collect()
    }
}

/// Element-wise scalar functions available on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Sinh,
    Cosh,
    Tanh,
    Sigmoid,
    Ln,
    Square,
}

impl Unary {
    fn apply(self, v: f64) -> f64 {
        match self {
            Unary::Exp => v.exp(),
            Unary::Sinh => v.sinh(),
            Unary::Cosh => v.cosh(),
            Unary::Tanh => v.tanh(),
            Unary::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Unary::Ln => v.ln(),
            Unary::Square => v * v,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Sinh => x.cosh(),
            Unary::Cosh => x.sinh(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Ln => 1.0 / x,
            Unary::Square => 2.0 * x,
        }
    }
}

impl From<crate::layers::Activation> for Unary {
    fn from(a: crate::layers::Activation) -> Self {
        match a {
            crate::layers::Activation::Exp => Unary::Exp,
            crate::layers::Activation::Sinh => Unary::Sinh,
            crate::layers::Activation::Cosh => Unary::Cosh,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// `aᵀ · b`
    TMatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    AddIdentity(NodeId),
    /// `x + s·B`, `s` a `1 × 1` node.
    AddScalar(NodeId, NodeId, BiasMode),
    /// `x + b` with `b` a `1 × cols` row added to every row.
    AddRow(NodeId, NodeId),
    Map(NodeId, Unary),
    Symmetrize(NodeId),
    /// Scale by `tau / max|x|` when that exceeds one; `hit` records the argmax when active.
    Guard { input: NodeId, tau: f64, hit: Option<usize> },
    /// `exp(x − x[argmax])`
    Gate { input: NodeId, argmax: usize },
    Conv2d(NodeId, NodeId),
    Sum(Vec<NodeId>),
    /// Row-major flatten of each input, concatenated into a `1 × n` row.
    Concat(Vec<NodeId>),
    RowSlice { input: NodeId, start: usize, len: usize },
    /// `logsumexp(l) − l[label]` for a `1 × C` logit row; saves the softmax.
    SoftmaxCe { logits: NodeId, label: usize, probs: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::TMatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddScalar(a, b, _)
            | Op::AddRow(a, b)
            | Op::Conv2d(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::AddIdentity(a) | Op::Map(a, _) | Op::Symmetrize(a) => vec![*a],
            Op::Guard { input, .. } | Op::Gate { input, .. } | Op::RowSlice { input, .. } => {
                vec![*input]
            }
            Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Sum(v) | Op::Concat(v) => v.clone(),
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameters, whose value lives in the store.
    value: Option<Mat>,
}

/// Forward record of one evaluation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Output of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Mat>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Mat::is_finite)
    }
}

fn shape_err(op: &'static str, a: &Mat, b: &Mat) -> DmtError {
    DmtError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(i)) => self.params.get(*i),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input (no gradient flows out of it).
    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Parameter `idx` of the store. Repeated calls return the same node.
    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Param(idx),
            value: None,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[idx] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn t_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).t_matmul(self.value(b))?;
        Ok(self.push(Op::TMatMul(a, b), v))
    }

    /// `Wᵀ X W`.
    pub fn congruence(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.t_matmul(w, xw)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul_elem(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_identity(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let x = self.value(a);
        if !x.is_square() {
            return Err(invalid("add_identity needs a square matrix"));
        }
        let v = x.add_identity(s);
        Ok(self.push(Op::AddIdentity(a), v))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: NodeId, mode: BiasMode) -> Result<NodeId> {
        let (x, sv) = (self.value(a), self.value(s));
        if sv.shape() != (1, 1) || !x.is_square() {
            return Err(shape_err("add_scalar", x, sv));
        }
        let v = mode.add_to(x, sv.get(0, 0));
        Ok(self.push(Op::AddScalar(a, s, mode), v))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_row", x, b));
        }
        let v = Mat::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + b.get(0, j));
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn map(&mut self, a: NodeId, f: Unary) -> NodeId {
        let v = self.value(a).map(|x| f.apply(x));
        self.push(Op::Map(a, f), v)
    }

    pub fn symmetrize(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if !x.is_square() {
            return Err(invalid("symmetrize needs a square matrix"));
        }
        let v = x.symmetrize();
        Ok(self.push(Op::Symmetrize(a), v))
    }

    /// Overflow guard: rescales by `tau / max|x|` when `max|x| > tau`.
    pub fn guard(&mut self, a: NodeId, tau: f64) -> NodeId {
        let x = self.value(a);
        let mut hit = None;
        let mut peak = 0.0;
        for (i, v) in x.data().iter().enumerate() {
            if v.abs() > peak {
                peak = v.abs();
                hit = Some(i);
            }
        }
        if peak > tau {
            let v = x.scale(tau / peak);
            self.push(Op::Guard { input: a, tau, hit }, v)
        } else {
            let v = x.clone();
            self.push(Op::Guard { input: a, tau, hit: None }, v)
        }
    }

    /// `exp(x − max x)`, i.e. `exp(x) / max(exp(x))`.
    pub fn gate(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (argmax, peak) = x.argmax();
        let v = x.map(|v| (v - peak).exp());
        self.push(Op::Gate { input: a, argmax }, v)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let v = conv2d_valid(self.value(x), self.value(w))?;
        Ok(self.push(Op::Conv2d(x, w), v))
    }

    pub fn sum(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = *items.first().ok_or_else(|| invalid("sum of zero nodes"))?;
        let mut acc = self.value(first).clone();
        for id in &items[1..] {
            acc.add_assign(self.value(*id))?;
        }
        Ok(self.push(Op::Sum(items.to_vec()), acc))
    }

    pub fn concat(&mut self, items: &[NodeId]) -> NodeId {
        let mut data = Vec::new();
        for id in items {
            data.extend_from_slice(self.value(*id).data());
        }
        self.push(Op::Concat(items.to_vec()), Mat::row_vector(data))
    }

    pub fn row_slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(invalid(format!(
                "row slice {start}..{} out of {} rows",
                start + len,
                x.rows()
            )));
        }
        let v = Mat::from_vec(len, x.cols(), x.data()[start * x.cols()..(start + len) * x.cols()].to_vec())?;
        Ok(self.push(Op::RowSlice { input: a, start, len }, v))
    }

    /// Softmax cross-entropy of a `1 × C` logit row against `label`; returns a `1 × 1` node.
    pub fn softmax_ce(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let l = self.value(logits);
        if l.rows() != 1 || label >= l.cols() {
            return Err(invalid(format!(
                "label {label} invalid for logits of shape {:?}",
                l.shape()
            )));
        }
        let probs = crate::layers::softmax(l.data());
        let peak = l.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = peak + l.data().iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
        let loss = lse - l.get(0, label);
        Ok(self.push(
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            },
            Mat::from_rows(&[[loss]]),
        ))
    }

    /// Softmax probabilities saved by a [`Tape::softmax_ce`] node.
    pub fn probabilities(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Sum of all entries of `a`, as a `1 × 1` node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len();
        let row = self.concat(&[a]);
        let ones = self.leaf(Mat::filled(n, 1, 1.0));
        self.matmul(row, ones).expect("conformant")
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(invalid("backward needs a 1x1 loss node"));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Mat>> = vec![None; n];
        adj[loss.0] = Some(Mat::filled(1, 1, 1.0));

        fn accumulate(adj: &mut [Option<Mat>], id: NodeId, g: Mat) {
            match &mut adj[id.0] {
                Some(acc) => acc.add_assign(&g).expect("adjoint shapes match values"),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(invalid(format!(
                        "tape is not topologically ordered: node {idx} reads node {}",
                        input.0
                    )));
                }
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(_) => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::TMatMul(a, b) => {
                    let ga = self.value(*b).matmul_t(&g)?;
                    let gb = self.value(*a).matmul(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Hadamard(a, b) => {
                    let ga = g.mul_elem(self.value(*b))?;
                    let gb = g.mul_elem(self.value(*a))?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::AddIdentity(a) => accumulate(&mut adj, *a, g),
                Op::AddScalar(a, s, mode) => {
                    let gs = match mode {
                        BiasMode::Ones => g.sum(),
                        BiasMode::Identity => g.trace(),
                    };
                    accumulate(&mut adj, *s, Mat::from_rows(&[[gs]]));
                    accumulate(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gr.data_mut()[j] += g.get(i, j);
                        }
                    }
                    accumulate(&mut adj, *row, gr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Map(a, f) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().expect("map output");
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data().iter().zip(y.data()))
                        .map(|(gv, (xv, yv))| gv * f.derivative(*xv, *yv))
                        .collect();
                    accumulate(&mut adj, *a, Mat::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::Symmetrize(a) => accumulate(&mut adj, *a, g.symmetrize()),
                Op::Guard { input, tau, hit } => match hit {
                    None => accumulate(&mut adj, *input, g),
                    Some(k) => {
                        let x = self.value(*input);
                        let xk = x.data()[*k];
                        let peak = xk.abs();
                        let dot: f64 = g.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
                        let mut gx = g.scale(tau / peak);
                        gx.data_mut()[*k] -= tau / (peak * peak) * dot * xk.signum();
                        accumulate(&mut adj, *input, gx);
                    }
                },
                Op::Gate { input, argmax } => {
                    let y = node.value.as_ref().expect("gate output");
                    let mut gx = g.mul_elem(y)?;
                    let total = gx.sum();
                    gx.data_mut()[*argmax] -= total;
                    accumulate(&mut adj, *input, gx);
                }
                Op::Conv2d(x, w) => {
                    let (gx, gw) = conv2d_valid_backward(self.value(*x), self.value(*w), &g);
                    accumulate(&mut adj, *x, gx);
                    accumulate(&mut adj, *w, gw);
                }
                Op::Sum(items) => {
                    for id in items {
                        accumulate(&mut adj, *id, g.clone());
                    }
                }
                Op::Concat(items) => {
                    let mut offset = 0;
                    for id in items {
                        let v = self.value(*id);
                        let part = g.data()[offset..offset + v.len()].to_vec();
                        offset += v.len();
                        accumulate(&mut adj, *id, Mat::from_vec(v.rows(), v.cols(), part)?);
                    }
                }
                Op::RowSlice { input, start, len } => {
                    let x = self.value(*input);
                    let mut gx = Mat::zeros(x.rows(), x.cols());
                    let c = x.cols();
                    gx.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                    accumulate(&mut adj, *input, gx);
                }
                Op::SoftmaxCe {
                    logits,
                    label,
                    probs,
                } => {
                    let scale = g.get(0, 0);
                    let mut gl = Mat::row_vector(probs.iter().map(|p| p * scale).collect());
                    gl.data_mut()[*label] -= scale;
                    accumulate(&mut adj, *logits, gl);
                }
            }
        }

        let mut grads = self.params.zeros_like();
        for (pidx, node) in self.param_nodes.iter().enumerate() {
            if let Some(id) = node {
                if id.0 < n {
                    if let Some(g) = adj[id.0].take() {
                        grads[pidx] = g;
                    }
                }
            }
        }
        Ok(Gradients { params: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<Mat>) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, v) in values.into_iter().enumerate() {
            s.push(format!("p{i}"), v);
        }
        s
    }

    /// Central-difference gradient of `f` with respect to parameter `pidx`.
    fn numeric(params: &ParamStore, pidx: usize, f: &dyn Fn(&ParamStore) -> f64) -> Mat {
        let h = 1e-6;
        let base = params.get(pidx).clone();
        let mut out = Mat::zeros(base.rows(), base.cols());
        for k in 0..base.len() {
            let mut p = params.clone();
            p.get_mut(pidx).data_mut()[k] += h;
            let up = f(&p);
            let mut p = params.clone();
            p.get_mut(pidx).data_mut()[k] -= h;
            let down = f(&p);
            out.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            let rel = (x - y).abs() / (x.abs() + y.abs()).max(1e-8);
            assert!(rel < tol, "analytic {x} vs numeric {y}");
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let p = store(vec![Mat::from_rows(&[[1.0, -2.0], [0.5, 3.0]])]);
        let mut t = Tape::new(&p);
        let x = t.param(0);
        let loss = t.sum_all(x);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.params[0], Mat::filled(2, 2, 1.0));
    }

    #[test]
    fn exp_sum_gradient_is_exp() {
        let x0 = Mat::from_rows(&[[0.1, -0.7], [1.2, 0.0]]);
        let p = store(vec![x0.clone()]);
        let mut t = Tape::new(&p);
        let x = t.param(0);
        let e = t.map(x, Unary::Exp);
        let loss = t.sum_all(e);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.params[0], x0.map(f64::exp));
    }

    #[test]
    fn unreached_params_get_zero() {
        let p = store(vec![Mat::identity(2), Mat::filled(3, 1, 2.0)]);
        let mut t = Tape::new(&p);
        let x = t.param(0);
        let loss = t.sum_all(x);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.params[1], Mat::zeros(3, 1));
    }

    #[test]
    fn backward_needs_scalar() {
        let p = store(vec![Mat::identity(2)]);
        let mut t = Tape::new(&p);
        let x = t.param(0);
        assert!(t.backward(x).is_err());
    }

    fn composite(p: &ParamStore, tape_out: &mut Option<Gradients>) -> f64 {
        let mut t = Tape::new(p);
        let x = t.param(0);
        let w = t.param(1);
        let s = t.param(2);
        let k = t.param(3);
        let xs = t.symmetrize(x).unwrap();
        let c = t.conv2d(xs, k).unwrap();
        let cs = t.symmetrize(c).unwrap();
        let proj = t.congruence(cs, w).unwrap();
        let sq = t.map(s, Unary::Square);
        let biased = t.add_scalar(proj, sq, BiasMode::Ones).unwrap();
        let biased = t.add_identity(biased, 0.1).unwrap();
        let g = t.guard(biased, 0.8);
        let gate = t.gate(g);
        let had = t.hadamard(gate, proj).unwrap();
        let sh = t.map(had, Unary::Sinh);
        let ch = t.map(proj, Unary::Cosh);
        let diff = t.sub(sh, ch).unwrap();
        let flat = t.concat(&[diff, gate]);
        let th = t.map(flat, Unary::Tanh);
        let sl = t.row_slice(th, 0, 1).unwrap();
        let sc = t.scale(sl, 1.7);
        let logits = t.concat(&[sc]);
        let ones = t.leaf(Mat::filled(logits_len(&t, logits), 3, 0.2));
        let ones = t.map(ones, Unary::Sigmoid);
        let l3 = t.matmul(logits, ones).unwrap();
        let bias = t.leaf(Mat::row_vector(vec![0.1, -0.2, 0.3]));
        let l3 = t.add_row(l3, bias).unwrap();
        let loss = t.softmax_ce(l3, 1).unwrap();
        let value = t.value(loss).get(0, 0);
        *tape_out = Some(t.backward(loss).unwrap());
        value
    }

    fn logits_len(t: &Tape, id: NodeId) -> usize {
        t.value(id).cols()
    }

    #[test]
    fn composite_matches_finite_differences() {
        let x = Mat::from_fn(5, 5, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        let w = Mat::from_fn(3, 2, |i, j| 0.4 + 0.1 * i as f64 - 0.2 * j as f64);
        let s = Mat::from_rows(&[[0.3]]);
        let k = Mat::from_rows(&[[1.0, 0.2, 0.0], [0.2, 0.9, 0.1], [0.0, 0.1, 0.8]]);
        let p = store(vec![x, w, s, k]);
        let mut grads = None;
        composite(&p, &mut grads);
        let grads = grads.unwrap();
        for pidx in 0..4 {
            let num = numeric(&p, pidx, &|q| composite(q, &mut None));
            assert_close(&grads.params[pidx], &num, 1e-6);
        }
    }

    #[test]
    fn guard_active_gradient() {
        let x0 = Mat::from_rows(&[[3.0, -5.0], [-4.5, 4.0]]);
        let p = store(vec![x0]);
        let f = |q: &ParamStore, out: &mut Option<Gradients>| {
            let mut t = Tape::new(q);
            let x = t.param(0);
            let g = t.guard(x, 2.0);
            let w = t.leaf(Mat::from_rows(&[[1.0, 2.0], [3.0, -1.0]]));
            let h = t.hadamard(g, w).unwrap();
            let e = t.map(h, Unary::Exp);
            let loss = t.sum_all(e);
            let v = t.value(loss).get(0, 0);
            *out = Some(t.backward(loss).unwrap());
            v
        };
        let mut g = None;
        f(&p, &mut g);
        let num = numeric(&p, 0, &|q| f(q, &mut None));
        assert_close(&g.unwrap().params[0], &num, 1e-6);
    }

    #[test]
    fn softmax_ce_value() {
        let p = store(vec![Mat::row_vector(vec![1.0, 2.0, 0.5])]);
        let mut t = Tape::new(&p);
        let l = t.param(0);
        let loss = t.softmax_ce(l, 1).unwrap();
        let probs = crate::layers::softmax(&[1.0, 2.0, 0.5]);
        assert!((t.value(loss).get(0, 0) + probs[1].ln()).abs() < 1e-14);
        assert_eq!(t.probabilities(loss).unwrap(), probs.as_slice());
        let g = t.backward(loss).unwrap();
        assert!((g.params[0].get(0, 1) - (probs[1] - 1.0)).abs() < 1e-15);
    }
}

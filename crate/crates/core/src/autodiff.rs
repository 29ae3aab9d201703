//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! creation order, so the node list is already topologically sorted and the
//! backward sweep is a single reverse pass.
//!
//! ```
//! use ulot::autodiff::Tape;
//! use ulot::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::row_vector(&[1.0, 2.0, 3.0]));
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Elementwise binary operations broadcast a `1x1`, `1xc` or `rx1` operand
//! against a full matrix; that covers scalar broadcast, bias rows and the
//! diagonal scalings `diag(v) X` / `X diag(v)`.

use std::cell::{Ref, RefCell};

use crate::tensor::{dot, gemm_nn, gemm_nt, Result, Tensor, TensorError};

/// Floor applied inside `log`.
pub const LOG_FLOOR: f64 = 1e-300;
/// Lower clamp for row norms in cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinaryKind, usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Pow(usize, f64),
    Sigmoid(usize),
    Relu(usize),
    Sin(usize),
    Cos(usize),
    Scale(usize, f64),
    Offset(usize),
    SoftmaxRows(usize),
    SoftmaxCols(usize),
    SqDist(usize, usize),
    Cosine(usize, usize),
    Concat(Vec<usize>),
    Sum(usize),
    RowSums(usize),
    ColSums(usize),
    Broadcast(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// Record of a differentiable computation.
///
/// A tape is single-threaded; build one per independent computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar root with respect to every parameter leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a parameter; `None` for constants and intermediates.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, panicking for non-parameters.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| panic!("no gradient recorded for node {}", var.id))
    }

    /// Node ids that received a gradient.
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| i))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, is_param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            is_param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs(&op).iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad, false)
    }

    /// Back-propagates from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[root.id].value.shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::scalar(1.0));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.is_param {
                if grads[id].is_none() {
                    let (r, c) = node.value.shape();
                    grads[id] = Some(Tensor::zeros(r, c));
                }
            } else {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::SqDist(a, b) | Op::Cosine(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Pow(a, _)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Sin(a)
        | Op::Cos(a)
        | Op::Scale(a, _)
        | Op::Offset(a)
        | Op::SoftmaxRows(a)
        | Op::SoftmaxCols(a)
        | Op::Sum(a)
        | Op::RowSums(a)
        | Op::ColSums(a)
        | Op::Broadcast(a) => vec![*a],
        Op::Concat(parts) => parts.clone(),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sums a full-shape gradient down to a broadcast operand's shape.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let (r, c) = shape;
    let mut out = Tensor::zeros(r, c);
    for i in 0..g.rows() {
        let oi = if r == 1 { 0 } else { i };
        for j in 0..g.cols() {
            let oj = if c == 1 { 0 } else { j };
            let idx = oi * c + oj;
            out.data_mut()[idx] += g.get(i, j);
        }
    }
    out
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(TensorError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

fn broadcast_value(t: &Tensor, shape: (usize, usize)) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let (tr, tc) = t.shape();
    Tensor::from_fn(shape.0, shape.1, |i, j| {
        t.get(if tr == 1 { 0 } else { i }, if tc == 1 { 0 } else { j })
    })
}

fn binary_forward(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let f = |x: f64, y: f64| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    };
    if a.shape() == b.shape() {
        return a.zip_map(b, kind.name(), f);
    }
    let shape = broadcast_shape(kind.name(), a.shape(), b.shape())?;
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Ok(Tensor::from_fn(shape.0, shape.1, |i, j| {
        let x = a.get(if ar == 1 { 0 } else { i }, if ac == 1 { 0 } else { j });
        let y = b.get(if br == 1 { 0 } else { i }, if bc == 1 { 0 } else { j });
        f(x, y)
    }))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

fn unit_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let norms: Vec<f64> = (0..x.rows())
        .map(|i| dot(x.row(i), x.row(i)).sqrt().max(NORM_FLOOR))
        .collect();
    let unit = Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) / norms[i]);
    (unit, norms)
}

/// Pushes a gradient through the normalization `x -> x / max(|x|, floor)`.
fn unit_rows_backward(x: &Tensor, unit: &Tensor, norms: &[f64], g_unit: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let gi = g_unit.row(i);
        let ui = unit.row(i);
        let n = norms[i];
        let raw = dot(x.row(i), x.row(i)).sqrt();
        let proj = if raw > NORM_FLOOR { dot(ui, gi) } else { 0.0 };
        for (o, (g, u)) in out.row_mut(i).iter_mut().zip(gi.iter().zip(ui)) {
            *o = (g - u * proj) / n;
        }
    }
    out
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::Binary(kind, a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (ga, gb) = match kind {
                BinaryKind::Add => (g.clone(), g.clone()),
                BinaryKind::Sub => (g.clone(), g.scale(-1.0)),
                BinaryKind::Mul => {
                    let full = g.shape();
                    let ab = broadcast_value(av, full);
                    let bb = broadcast_value(bv, full);
                    (g.hadamard(&bb).unwrap(), g.hadamard(&ab).unwrap())
                }
                BinaryKind::Div => {
                    let full = g.shape();
                    let bb = broadcast_value(bv, full);
                    let ga = g.zip_map(&bb, "div", |x, y| x / y).unwrap();
                    let gb = Tensor::from_fn(full.0, full.1, |i, j| {
                        -g.get(i, j) * out.get(i, j) / bb.get(i, j)
                    });
                    (ga, gb)
                }
            };
            accumulate(grads, nodes, *a, reduce_to(&ga, av.shape()));
            accumulate(grads, nodes, *b, reduce_to(&gb, bv.shape()));
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, g.matmul_nt(bv).unwrap());
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, av.matmul_tn(g).unwrap());
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::Exp(a) => accumulate(grads, nodes, *a, g.hadamard(out).unwrap()),
        Op::Log(a) => {
            let ga = g
                .zip_map(val(*a), "log", |gv, x| if x > LOG_FLOOR { gv / x } else { 0.0 })
                .unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Pow(a, p) => {
            let p = *p;
            let ga = g
                .zip_map(val(*a), "pow", |gv, x| gv * p * x.powf(p - 1.0))
                .unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sigmoid(a) => {
            let ga = g.zip_map(out, "sigmoid", |gv, y| gv * y * (1.0 - y)).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Relu(a) => {
            let ga = g
                .zip_map(val(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })
                .unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sin(a) => {
            let ga = g.zip_map(val(*a), "sin", |gv, x| gv * x.cos()).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Cos(a) => {
            let ga = g.zip_map(val(*a), "cos", |gv, x| -gv * x.sin()).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.scale(*c)),
        Op::Offset(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::SoftmaxRows(a) => {
            let mut ga = Tensor::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                let (y, gy) = (out.row(i), g.row(i));
                let s = dot(y, gy);
                for (o, (yv, gv)) in ga.row_mut(i).iter_mut().zip(y.iter().zip(gy)) {
                    *o = yv * (gv - s);
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::SoftmaxCols(a) => {
            let s = out.hadamard(g).unwrap().col_sums();
            let ga = Tensor::from_fn(out.rows(), out.cols(), |i, j| {
                out.get(i, j) * (g.get(i, j) - s[j])
            });
            accumulate(grads, nodes, *a, ga);
        }
        Op::SqDist(a, b) => {
            let (x, y) = (val(*a), val(*b));
            if nodes[*a].requires_grad {
                let rs = g.row_sums();
                let gy = g.matmul(y).unwrap();
                let ga = Tensor::from_fn(x.rows(), x.cols(), |i, k| {
                    2.0 * (rs[i] * x.get(i, k) - gy.get(i, k))
                });
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let cs = g.col_sums();
                let gx = g.matmul_tn(x).unwrap();
                let gb = Tensor::from_fn(y.rows(), y.cols(), |j, k| {
                    2.0 * (cs[j] * y.get(j, k) - gx.get(j, k))
                });
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Cosine(a, b) => {
            let (x, y) = (val(*a), val(*b));
            let (ux, nx) = unit_rows(x);
            let (uy, ny) = unit_rows(y);
            if nodes[*a].requires_grad {
                let gux = g.matmul(&uy).unwrap();
                accumulate(grads, nodes, *a, unit_rows_backward(x, &ux, &nx, &gux));
            }
            if nodes[*b].requires_grad {
                let guy = g.matmul_tn(&ux).unwrap();
                accumulate(grads, nodes, *b, unit_rows_backward(y, &uy, &ny, &guy));
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if nodes[p].requires_grad {
                    let gp = Tensor::from_fn(g.rows(), w, |i, j| g.get(i, offset + j));
                    accumulate(grads, nodes, p, gp);
                }
                offset += w;
            }
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Tensor::filled(r, c, g.item()));
        }
        Op::RowSums(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
        }
        Op::ColSums(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Tensor::from_fn(r, c, |_, j| g.get(0, j)));
        }
        Op::Broadcast(a) => {
            let shape = val(*a).shape();
            accumulate(grads, nodes, *a, reduce_to(g, shape));
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the recorded value. Drop it before recording new ops.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value_ref().shape()
    }

    /// Value of a `1x1` variable.
    pub fn item(&self) -> f64 {
        self.value_ref().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let value = f(&self.value_ref());
        self.tape.record(value, op)
    }

    fn binary(self, kind: BinaryKind, other: Var<'t>) -> Result<Var<'t>> {
        let value = binary_forward(kind, &self.value_ref(), &other.value_ref())?;
        Ok(self.tape.record(value, Op::Binary(kind, self.id, other.id)))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Div, other)
    }

    /// `diag(v) * self` for a column vector `v`.
    pub fn scale_rows(self, v: Var<'t>) -> Result<Var<'t>> {
        let (r, _) = self.shape();
        if v.shape() != (r, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.shape(),
                rhs: v.shape(),
            });
        }
        self.mul(v)
    }

    /// `self * diag(v)` for a row vector `v`.
    pub fn scale_cols(self, v: Var<'t>) -> Result<Var<'t>> {
        let (_, c) = self.shape();
        if v.shape() != (1, c) {
            return Err(TensorError::ShapeMismatch {
                op: "scale_cols",
                lhs: self.shape(),
                rhs: v.shape(),
            });
        }
        self.mul(v)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.value_ref(), other.value_ref());
            if a.cols() != b.rows() {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape(),
                    rhs: b.shape(),
                });
            }
            let mut out = vec![0.0; a.rows() * b.cols()];
            gemm_nn(a.data(), b.data(), &mut out, a.rows(), a.cols(), b.cols());
            Tensor::new(a.rows(), b.cols(), out)?
        };
        Ok(self.tape.record(value, Op::MatMul(self.id, other.id)))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |x| x.map(f64::exp))
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |x| x.map(|v| v.max(LOG_FLOOR).ln()))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(Op::Pow(self.id, p), |x| x.map(|v| v.powf(p)))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| x.map(sigmoid))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.map(|v| v.max(0.0)))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), |x| x.map(f64::sin))
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), |x| x.map(f64::cos))
    }

    /// Multiplication by a constant.
    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x.scale(c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Addition of a constant.
    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |x| x.map(|v| v + c))
    }

    /// Softmax along each row (max-subtracted).
    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), softmax_rows)
    }

    /// Softmax along each column (max-subtracted).
    pub fn softmax_cols(self) -> Var<'t> {
        self.unary(Op::SoftmaxCols(self.id), |x| softmax_rows(&x.transpose()).transpose())
    }

    /// `out[i][j] = |self_i - other_j|^2` over rows.
    pub fn sq_dist(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (x, y) = (self.value_ref(), other.value_ref());
            if x.cols() != y.cols() {
                return Err(TensorError::ShapeMismatch {
                    op: "sq_dist",
                    lhs: x.shape(),
                    rhs: y.shape(),
                });
            }
            Tensor::from_fn(x.rows(), y.rows(), |i, j| {
                x.row(i)
                    .iter()
                    .zip(y.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
        };
        Ok(self.tape.record(value, Op::SqDist(self.id, other.id)))
    }

    /// `out[i][j] = cos(self_i, other_j)` with norms clamped at [`NORM_FLOOR`].
    pub fn cosine_sim(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (x, y) = (self.value_ref(), other.value_ref());
            if x.cols() != y.cols() {
                return Err(TensorError::ShapeMismatch {
                    op: "cosine_sim",
                    lhs: x.shape(),
                    rhs: y.shape(),
                });
            }
            let (ux, _) = unit_rows(&x);
            let (uy, _) = unit_rows(&y);
            let mut out = vec![0.0; x.rows() * y.rows()];
            gemm_nt(ux.data(), uy.data(), &mut out, x.rows(), x.cols(), y.rows());
            Tensor::new(x.rows(), y.rows(), out)?
        };
        Ok(self.tape.record(value, Op::Cosine(self.id, other.id)))
    }

    /// Full sum, `1x1`.
    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| Tensor::scalar(x.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value_ref().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum of each row, `r x 1`.
    pub fn row_sums(self) -> Var<'t> {
        self.unary(Op::RowSums(self.id), |x| Tensor::column(&x.row_sums()))
    }

    /// Sum of each column, `1 x c`.
    pub fn col_sums(self) -> Var<'t> {
        self.unary(Op::ColSums(self.id), |x| Tensor::row_vector(&x.col_sums()))
    }

    pub fn row_means(self) -> Var<'t> {
        let c = self.shape().1 as f64;
        self.row_sums().scale(1.0 / c)
    }

    pub fn col_means(self) -> Var<'t> {
        let r = self.shape().0 as f64;
        self.col_sums().scale(1.0 / r)
    }

    /// Expands a scalar, row or column vector to `rows x cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.value_ref();
            broadcast_shape("broadcast", x.shape(), (rows, cols))?;
            if (x.rows() != 1 && x.rows() != rows) || (x.cols() != 1 && x.cols() != cols) {
                return Err(TensorError::NotBroadcastable {
                    op: "broadcast",
                    shape: x.shape(),
                });
            }
            broadcast_value(&x, (rows, cols))
        };
        Ok(self.tape.record(value, Op::Broadcast(self.id)))
    }

    /// Sum of all entries of `self * other` (Frobenius inner product).
    pub fn inner(self, other: Var<'t>) -> Result<Var<'t>> {
        Ok(self.mul(other)?.sum())
    }
}

/// Concatenates variables along the column axis.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().expect("concat of zero parts");
    let tape = first.tape;
    let value = {
        let refs: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value_ref()).collect();
        let plain: Vec<&Tensor> = refs.iter().map(|r| &**r).collect();
        Tensor::concat_cols(&plain)?
    };
    Ok(tape.record(value, Op::Concat(parts.iter().map(|p| p.id).collect())))
}

/// Maximum relative discrepancy between the tape gradient of `f` and
/// central finite differences, over every coordinate of every input.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = points.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&tape, &vars)?;
    if !root.item().is_finite() {
        return Err(TensorError::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(root)?;

    let mut worst = 0.0_f64;
    let mut shifted: Vec<Tensor> = points.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        if !analytic.is_finite() {
            return Err(TensorError::NonFinite(format!("gradient of input {k}")));
        }
        for idx in 0..points[k].len() {
            let orig = points[k].data()[idx];
            shifted[k].data_mut()[idx] = orig + step;
            let up = eval(&shifted)?;
            shifted[k].data_mut()[idx] = orig - step;
            let down = eval(&shifted)?;
            shifted[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

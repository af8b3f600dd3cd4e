use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::kernels::{gemm, Strides};
use super::{axis_extents, Result, Tensor, TensorError};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul { a: usize, b: usize, trans_b: bool },
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    Sum { x: usize, axis: usize },
    Mean { x: usize, axis: usize },
    SumAll(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Embedding { table: usize, ids: Vec<usize> },
    MaskedFill { x: usize, mask: Arc<[bool]> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    GatherRows { x: usize, idx: Vec<usize> },
}

impl Op {
    fn operands(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Transpose(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::SumAll(x)
            | Op::Reshape(x) => vec![*x],
            Op::Clamp { x, .. }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Sum { x, .. }
            | Op::Mean { x, .. }
            | Op::Slice { x, .. }
            | Op::MaskedFill { x, .. }
            | Op::GatherRows { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Embedding { table, .. } => vec![*table],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations for one forward pass.
///
/// Nodes are appended in evaluation order, so every operand id precedes
/// its result id. A tape supports exactly one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to every gradient-tracking leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.grads.get(&var.id).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        self.grads.remove(&var.id).unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::Overflow { op })
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// Result shape for an elementwise pair where the smaller operand (if any)
/// must match a trailing suffix of the larger one.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if nb == 1 && b.len() <= a.len() {
        return Ok(a.to_vec());
    }
    if na == 1 && a.len() <= b.len() {
        return Ok(b.to_vec());
    }
    if b.len() < a.len() && a.ends_with(b) {
        return Ok(a.to_vec());
    }
    if a.len() < b.len() && b.ends_with(a) {
        return Ok(b.to_vec());
    }
    Err(shape_err(op, format!("{a:?} vs {b:?}")))
}

/// Adds `g` (full size) into `acc` (possibly broadcast, smaller) by folding repeats.
fn reduce_into(acc: &mut [f64], g: &[f64], scale: impl Fn(usize) -> f64) {
    let n = acc.len();
    if n == g.len() {
        for (i, (a, gv)) in acc.iter_mut().zip(g).enumerate() {
            *a += gv * scale(i);
        }
    } else {
        for (i, gv) in g.iter().enumerate() {
            acc[i % n] += gv * scale(i);
        }
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, op: Op, shape: Vec<usize>, values: Vec<f64>, name: &'static str) -> Result<Var<'_>> {
        check_finite(name, &values)?;
        let rg = self.requires(&op.operands());
        Ok(self.push(Tensor::from_parts(shape, values), op, rg))
    }

    /// Registers a constant (no gradient tracking).
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// Registers a gradient-tracking leaf.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Validated creation in one step, mirroring [`Tensor::new`].
    pub fn create(&self, shape: impl Into<Vec<usize>>, values: Vec<f64>, requires_grad: bool) -> Result<Var<'_>> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t, Op::Leaf, requires_grad))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, loss.tape), "loss belongs to another tape");
        if self.consumed.replace(true) {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, node, id, g, &mut grads, &mut out);
        }
        Ok(out)
    }
}

/// Accumulates into the gradient slot of `id` when it tracks gradients.
fn acc<F: FnOnce(&mut [f64])>(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: F) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    id: usize,
    g: Vec<f64>,
    grads: &mut [Option<Vec<f64>>],
    out: &mut Gradients,
) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {
            out.grads.insert(id, Tensor::from_parts(node.value.shape().to_vec(), g));
        }
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |s| reduce_into(s, &g, |_| 1.0));
            acc(nodes, grads, *b, |s| reduce_into(s, &g, |_| 1.0));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |s| reduce_into(s, &g, |_| 1.0));
            acc(nodes, grads, *b, |s| reduce_into(s, &g, |_| -1.0));
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let (na, nb) = (av.len(), bv.len());
            acc(nodes, grads, *a, |s| reduce_into(s, &g, |i| bv[i % nb]));
            acc(nodes, grads, *b, |s| reduce_into(s, &g, |i| av[i % na]));
        }
        Op::Scale(x, c) => {
            acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).for_each(|(a, gv)| *a += c * gv));
        }
        Op::AddScalar(x) => {
            acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv));
        }
        Op::MatMul { a, b, trans_b } => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let (m, k) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let n = node.value.shape()[1];
            // dA = G * B^T  (B stored k x n, or n x k when trans_b)
            acc(nodes, grads, *a, |s| {
                let sb = if *trans_b { Strides::normal(k) } else { Strides::transposed(n) };
                gemm(m, n, k, &g, Strides::normal(n), bv, sb, 1.0, s);
            });
            if *trans_b {
                // B is n x k: dB = G^T * A
                acc(nodes, grads, *b, |s| {
                    gemm(n, m, k, &g, Strides::transposed(n), av, Strides::normal(k), 1.0, s);
                });
            } else {
                // dB = A^T * G
                acc(nodes, grads, *b, |s| {
                    gemm(k, m, n, av, Strides::transposed(k), &g, Strides::normal(n), 1.0, s);
                });
            }
        }
        Op::Transpose(x) => {
            let shape = node.value.shape();
            let (r, c) = (shape[0], shape[1]);
            acc(nodes, grads, *x, |s| {
                for i in 0..r {
                    for j in 0..c {
                        s[j * r + i] += g[i * c + j];
                    }
                }
            });
        }
        Op::Exp(x) => acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).zip(y).for_each(|((a, gv), yv)| *a += gv * yv)),
        Op::Log(x) => {
            let xv = nodes[*x].value.data();
            acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).zip(xv).for_each(|((a, gv), xv)| *a += gv / xv))
        }
        Op::Tanh(x) => {
            acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).zip(y).for_each(|((a, gv), yv)| *a += gv * (1.0 - yv * yv)))
        }
        Op::Sigmoid(x) => {
            acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).zip(y).for_each(|((a, gv), yv)| *a += gv * yv * (1.0 - yv)))
        }
        Op::Relu(x) => acc(nodes, grads, *x, |s| {
            s.iter_mut().zip(&g).zip(y).for_each(|((a, gv), yv)| {
                if *yv > 0.0 {
                    *a += gv
                }
            })
        }),
        Op::Clamp { x, lo, hi } => {
            let xv = nodes[*x].value.data();
            acc(nodes, grads, *x, |s| {
                s.iter_mut().zip(&g).zip(xv).for_each(|((a, gv), xv)| {
                    if xv >= lo && xv <= hi {
                        *a += gv
                    }
                })
            })
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = axis_extents(node.value.shape(), *axis);
            acc(nodes, grads, *x, |s| {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..n {
                            let p = base + j * inner;
                            s[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            })
        }
        Op::LogSoftmax { x, axis } => {
            let (outer, n, inner) = axis_extents(node.value.shape(), *axis);
            acc(nodes, grads, *x, |s| {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let gsum: f64 = (0..n).map(|j| g[base + j * inner]).sum();
                        for j in 0..n {
                            let p = base + j * inner;
                            s[p] += g[p] - y[p].exp() * gsum;
                        }
                    }
                }
            })
        }
        Op::Sum { x, axis } | Op::Mean { x, axis } => {
            let (outer, n, inner) = axis_extents(nodes[*x].value.shape(), *axis);
            let scale = if matches!(node.op, Op::Mean { .. }) { 1.0 / n as f64 } else { 1.0 };
            acc(nodes, grads, *x, |s| {
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            s[(o * n + j) * inner + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            })
        }
        Op::SumAll(x) => acc(nodes, grads, *x, |s| s.iter_mut().for_each(|a| *a += g[0])),
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.shape()[*axis];
                acc(nodes, grads, p, |s| {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        for (d, gv) in s[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                            *d += gv;
                        }
                    }
                });
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, full, inner) = axis_extents(nodes[*x].value.shape(), *axis);
            let len = node.value.shape()[*axis];
            acc(nodes, grads, *x, |s| {
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    for (d, gv) in s[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                        *d += gv;
                    }
                }
            })
        }
        Op::Reshape(x) => acc(nodes, grads, *x, |s| s.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv)),
        Op::Embedding { table, ids } => {
            let d = node.value.shape()[1];
            acc(nodes, grads, *table, |s| {
                for (r, &id) in ids.iter().enumerate() {
                    for (a, gv) in s[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *a += gv;
                    }
                }
            })
        }
        Op::MaskedFill { x, mask } => acc(nodes, grads, *x, |s| {
            for ((a, gv), m) in s.iter_mut().zip(&g).zip(mask.iter()) {
                if !m {
                    *a += gv
                }
            }
        }),
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let d = *node.value.shape().last().unwrap();
            let rows = xhat.len() / d;
            let gam = nodes[*gamma].value.data();
            acc(nodes, grads, *x, |s| {
                for r in 0..rows {
                    let row = r * d..(r + 1) * d;
                    let gr = &g[row.clone()];
                    let xh = &xhat[row.clone()];
                    let mut sum_dx = 0.0;
                    let mut sum_dx_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        sum_dx += dxh;
                        sum_dx_xh += dxh * xh[j];
                    }
                    let inv = inv_std[r];
                    let df = d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        s[r * d + j] += inv / df * (df * dxh - sum_dx - xh[j] * sum_dx_xh);
                    }
                }
            });
            acc(nodes, grads, *gamma, |s| {
                for r in 0..rows {
                    for j in 0..d {
                        s[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            });
            acc(nodes, grads, *beta, |s| {
                for r in 0..rows {
                    for j in 0..d {
                        s[j] += g[r * d + j];
                    }
                }
            });
        }
        Op::GatherRows { x, idx } => {
            let cols = nodes[*x].value.shape()[1];
            acc(nodes, grads, *x, |s| {
                for (r, &c) in idx.iter().enumerate() {
                    s[r * cols + c] += g[r];
                }
            })
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

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().to_vec()
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands recorded on different tapes");
    }

    /// Constant copy that blocks gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn binary(&self, other: &Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(other);
        let a = self.value();
        let b = other.value();
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let (ad, bd) = (a.data(), b.data());
        let (na, nb) = (ad.len(), bd.len());
        let n = shape.iter().product::<usize>();
        let values = if na == nb {
            ad.iter().zip(bd).map(|(x, y)| f(*x, *y)).collect()
        } else {
            (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
        };
        self.tape.record(op, shape, values, name)
    }

    /// Elementwise sum; the smaller operand broadcasts over leading axes.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    fn unary(&self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let x = self.value();
        let values = x.data().iter().map(|v| f(*v)).collect();
        self.tape.record(op, x.shape().to_vec(), values, name)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |v| v + c)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(v) = x.data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::DomainError { op: "log", detail: format!("log of {v}") });
        }
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary("clamp", Op::Clamp { x: self.id, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(self)
    }

    /// 2-D matrix product `[m,k] x [k,n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false)
    }

    /// `self x other^T` for `[m,k]` and `[n,k]` operands.
    pub fn matmul_t(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        self.same_tape(other);
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", format!("expects 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut c = vec![0.0; m * n];
        let strides = if trans_b { Strides::transposed(k) } else { Strides::normal(n) };
        gemm(m, k, n, a.data(), Strides::normal(k), b.data(), strides, 0.0, &mut c);
        self.tape.record(Op::MatMul { a: self.id, b: other.id, trans_b }, vec![m, n], c, "matmul")
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("expects 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let d = x.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.tape.record(Op::Transpose(self.id), vec![c, r], out, "transpose")
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(shape_err(op, format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(shape)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        self.softmax_impl(axis, false)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t>> {
        self.softmax_impl(axis, true)
    }

    fn softmax_impl(&self, axis: usize, log: bool) -> Result<Var<'t>> {
        let name = if log { "log_softmax" } else { "softmax" };
        let shape = self.check_axis(name, axis)?;
        let x = self.value();
        let d = x.data();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n).map(|j| d[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = (0..n).map(|j| (d[base + j * inner] - max).exp()).sum();
                let lse = max + sum.ln();
                for j in 0..n {
                    let p = base + j * inner;
                    out[p] = if log { d[p] - lse } else { (d[p] - lse).exp() };
                }
            }
        }
        let op = if log { Op::LogSoftmax { x: self.id, axis } } else { Op::Softmax { x: self.id, axis } };
        self.tape.record(op, shape, out, name)
    }

    fn reduce(&self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let name = if mean { "mean" } else { "sum" };
        let shape = self.check_axis(name, axis)?;
        let x = self.value();
        let d = x.data();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + j) * inner + i];
                }
            }
        }
        if mean {
            if n == 0 {
                return Err(TensorError::DomainError { op: "mean", detail: "empty axis".into() });
            }
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let op = if mean { Op::Mean { x: self.id, axis } } else { Op::Sum { x: self.id, axis } };
        self.tape.record(op, out_shape, out, name)
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, false)
    }

    pub fn mean(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce(axis, true)
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&self) -> Result<Var<'t>> {
        let total: f64 = self.value().data().iter().sum();
        self.tape.record(Op::SumAll(self.id), vec![], vec![total], "sum_all")
    }

    pub fn mean_all(&self) -> Result<Var<'t>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(TensorError::DomainError { op: "mean_all", detail: "empty tensor".into() });
        }
        self.sum_all()?.scale(1.0 / n as f64)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let tape = first.tape;
        let base = first.check_axis("concat", axis)?;
        let values: Vec<Tensor> = parts
            .iter()
            .map(|p| {
                first.same_tape(p);
                p.value()
            })
            .collect();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{base:?} vs {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let op = Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis };
        tape.record(op, shape, out, "concat")
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.check_axis("slice", axis)?;
        if start > end || end > shape[axis] {
            return Err(shape_err("slice", format!("range {start}..{end} on axis of length {}", shape[axis])));
        }
        let x = self.value();
        let d = x.data();
        let (outer, full, inner) = axis_extents(&shape, axis);
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&d[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.tape.record(Op::Slice { x: self.id, axis, start }, out_shape, out, "slice")
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value().reshaped(shape)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(x, Op::Reshape(self.id), rg))
    }

    /// Rows of a `[V, d]` table selected by `ids`, giving `[len(ids), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'t>> {
        let t = self.value();
        let s = t.shape();
        if s.len() != 2 {
            return Err(shape_err("embedding", format!("table must be 2-D, got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::InvalidArgument(format!("embedding id {id} >= table size {v}")));
            }
            out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        self.tape.record(Op::Embedding { table: self.id, ids: ids.to_vec() }, vec![ids.len(), d], out, "embedding")
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn masked_fill(&self, mask: &[bool], value: f64) -> Result<Var<'t>> {
        let x = self.value();
        if mask.len() != x.numel() {
            return Err(shape_err("masked_fill", format!("mask of {} for {} values", mask.len(), x.numel())));
        }
        let out = x.data().iter().zip(mask).map(|(v, m)| if *m { value } else { *v }).collect();
        self.tape.record(Op::MaskedFill { x: self.id, mask: mask.into() }, x.shape().to_vec(), out, "masked_fill")
    }

    /// Normalizes the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&self, gamma: &Var<'t>, beta: &Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(gamma);
        self.same_tape(beta);
        let x = self.value();
        let shape = x.shape().to_vec();
        let d = *shape.last().ok_or_else(|| shape_err("layer_norm", "scalar input".into()))?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(shape_err("layer_norm", format!("gamma {:?} beta {:?} for width {d}", gv.shape(), bv.shape())));
        }
        let rows = x.numel().checked_div(d).unwrap_or(0);
        let data = x.data();
        let mut xhat = vec![0.0; data.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; data.len()];
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mu) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let op = Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std };
        self.tape.record(op, shape, out, "layer_norm")
    }

    /// For a `[n, c]` input, picks column `idx[r]` of each row `r`, giving `[n]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(shape_err("gather_rows", format!("{s:?} with {} indices", idx.len())));
        }
        let c = s[1];
        let mut out = Vec::with_capacity(idx.len());
        for (r, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(TensorError::InvalidArgument(format!("column {j} >= {c}")));
            }
            out.push(x.data()[r * c + j]);
        }
        self.tape.record(Op::GatherRows { x: self.id, idx: idx.to_vec() }, vec![idx.len()], out, "gather_rows")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.create(vec![3], vec![0.0; 3], false).unwrap();
        let y = x.softmax(0).unwrap();
        assert!(close(&y.to_vec(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn log_softmax_hand_value() {
        let tape = Tape::new();
        let x = tape.create(vec![2], vec![1.0, 2.0], false).unwrap();
        let y = x.log_softmax(0).unwrap().to_vec();
        // x - ln(e^1 + e^2)
        let lse = (1f64.exp() + 2f64.exp()).ln();
        assert!(close(&y, &[1.0 - lse, 2.0 - lse], 1e-15));
        assert!(close(&y, &[-1.313262, -0.313262], 1e-6));
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let i = tape.create(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
        let a = tape.create(vec![2, 2], vec![0.3, -1.2, 4.0, 2.5], false).unwrap();
        assert_eq!(i.matmul(&a).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.create(vec![3], vec![1.0, -2.0, 3.0], true).unwrap();
        let loss = x.square().unwrap().sum_all().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).to_vec(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_of_mean_is_uniform() {
        let tape = Tape::new();
        let x = tape.create(vec![4], vec![3.0, 1.0, 4.0, 1.0], true).unwrap();
        let loss = x.mean(0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let tape = Tape::new();
        let x = tape.create(vec![2], vec![1.0, 2.0], true).unwrap();
        let y = x.exp().unwrap();
        assert!(matches!(tape.backward(y), Err(TensorError::NotScalar(_))));

        let tape = Tape::new();
        let x = tape.create(vec![2], vec![1.0, 2.0], true).unwrap();
        let s = x.sum_all().unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s).unwrap_err(), TensorError::TapeConsumed);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.create(vec![2], vec![1.0, 2.0], true).unwrap();
        let unused = tape.create(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        let g = tape.backward(x.sum_all().unwrap()).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let tape = Tape::new();
        let x = tape.create(vec![2], vec![1.0, 0.0], false).unwrap();
        assert!(matches!(x.log(), Err(TensorError::DomainError { .. })));
    }

    #[test]
    fn overflow_raises() {
        let tape = Tape::new();
        let x = tape.create(vec![1], vec![1000.0], false).unwrap();
        assert_eq!(x.exp().unwrap_err(), TensorError::Overflow { op: "exp" });
    }

    #[test]
    fn bias_broadcasts_over_leading_axis() {
        let tape = Tape::new();
        let x = tape.create(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true).unwrap();
        let b = tape.create(vec![3], vec![10.0, 20.0, 30.0], true).unwrap();
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let g = tape.backward(y.sum_all().unwrap()).unwrap();
        assert_eq!(g.wrt(b).to_vec(), vec![2.0; 3]);
        assert!(matches!(
            x.add(&tape.create(vec![2], vec![0.0; 2], false).unwrap()),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let tape = Tape::new();
        let a = tape.create(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let b = tape.create(vec![2, 1], vec![5.0, 6.0], false).unwrap();
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.slice(1, 2, 3).unwrap().to_vec(), vec![5.0, 6.0]);
        assert_eq!(c.slice(0, 1, 1).unwrap().shape(), vec![0, 3]);
    }

    #[test]
    fn identical_operands_give_bit_identical_results() {
        let run = || {
            let tape = Tape::new();
            let x = tape.create(vec![2, 3], vec![0.1, -0.7, 2.2, 1.3, 0.0, -4.1], false).unwrap();
            x.log_softmax(1).unwrap().tanh().unwrap().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

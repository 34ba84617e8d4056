//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Every operation is evaluated eagerly when it is recorded, so building the
//! tape *is* the forward pass. Values are immutable once recorded; the tape
//! only ever grows, which means a backward pass from a node can never observe
//! operations recorded after it.

use std::cell::RefCell;
use std::sync::Arc;

use super::{Matrix, TensorError};
use crate::policy::squash;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Scale(f64),
    Offset(f64),
    Tanh,
    Exp,
    Log,
    Sqrt,
    Cos,
    Sin,
    Abs,
    LeakyRelu(f64),
    Softplus,
    Square,
    Expm1,
    /// `min(x, c)`
    MinConst(f64),
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Scale(_) => "scale",
            Unary::Offset(_) => "offset",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Cos => "cos",
            Unary::Sin => "sin",
            Unary::Abs => "abs",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Softplus => "softplus",
            Unary::Square => "square",
            Unary::Expm1 => "expm1",
            Unary::MinConst(_) => "min_const",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Scale(k) => k * x,
            Unary::Offset(k) => x + k,
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Cos => x.cos(),
            Unary::Sin => x.sin(),
            Unary::Abs => x.abs(),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Softplus => softplus(x),
            Unary::Square => x * x,
            Unary::Expm1 => x.exp_m1(),
            Unary::MinConst(c) => x.min(c),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Scale(k) => k,
            Unary::Offset(_) => 1.0,
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Cos => -x.sin(),
            Unary::Sin => x.cos(),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Square => 2.0 * x,
            Unary::Expm1 => y + 1.0,
            Unary::MinConst(c) => {
                if x <= c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stored rollout data for [`Tape::squashed_log_prob`].
#[derive(Clone, Debug)]
pub struct SquashData {
    /// `u - u_base`, the realised deviation from the base input.
    pub deviation: Matrix,
    /// Pre-squash sample drawn at rollout time.
    pub presquash: Matrix,
    /// Magnitude used at rollout time.
    pub magnitude: Matrix,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Unary(NodeId, Unary),
    Transpose(NodeId),
    SelectRows(NodeId, Arc<[usize]>),
    SliceCols(NodeId, usize),
    SumAll(NodeId),
    MaskedSoftmax(NodeId, Arc<[bool]>),
    Clip(NodeId, f64, f64),
    Minimum(NodeId, NodeId),
    SquashedLogProb { mu: NodeId, log_std: NodeId, magnitude: NodeId, data: Arc<SquashData> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Unary(_, u) => u.name(),
            Op::Transpose(_) => "transpose",
            Op::SelectRows(..) => "select_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SumAll(_) => "sum",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::Clip(..) => "clip",
            Op::Minimum(..) => "minimum",
            Op::SquashedLogProb { .. } => "squashed_log_prob",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of evaluated operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
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

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Matrix, op: Op, parents: &[NodeId]) -> Result<Var<'_>, TensorError> {
        let mut nodes = self.nodes.borrow_mut();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { node: nodes.len(), op: op.name() });
        }
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value, op, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    pub fn value(&self, var: Var<'_>) -> Matrix {
        self.with_value(var.id, Matrix::clone)
    }

    /// Softmax over each row restricted to `mask` (row-major, same shape as
    /// the input). Masked-out entries are exactly zero.
    pub fn masked_softmax<'t>(
        &'t self,
        x: Var<'t>,
        mask: Arc<[bool]>,
    ) -> Result<Var<'t>, TensorError> {
        let value = self.with_value(x.id, |m| {
            if mask.len() != m.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_softmax",
                    left: m.shape(),
                    right: (mask.len(), 1),
                });
            }
            let cols = m.cols();
            let mut out = Matrix::zeros(m.rows(), cols);
            for r in 0..m.rows() {
                let row = m.row(r);
                let keep = &mask[r * cols..(r + 1) * cols];
                let max = row
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .fold(f64::NEG_INFINITY, |a, (&v, _)| a.max(v));
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::EmptySoftmaxRow { row: r });
                }
                let mut total = 0.0;
                let out_row = out.row_mut(r);
                for c in 0..cols {
                    if keep[c] {
                        let e = (row[c] - max).exp();
                        out_row[c] = e;
                        total += e;
                    }
                }
                for v in out_row.iter_mut() {
                    *v /= total;
                }
            }
            Ok(out)
        })?;
        self.push(value, Op::MaskedSoftmax(x.id, mask), &[x.id])
    }

    /// Per-element log-density of a squashed Gaussian action
    /// `u = u_base + m * tanh(a)`, `a ~ N(mu, exp(log_std)^2)`, evaluated at
    /// the stored deviation `u - u_base` under the current magnitude `m`.
    pub fn squashed_log_prob<'t>(
        &'t self,
        mu: Var<'t>,
        log_std: Var<'t>,
        magnitude: Var<'t>,
        data: Arc<SquashData>,
    ) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (mu_v, ls_v, m_v) =
                (&nodes[mu.id].value, &nodes[log_std.id].value, &nodes[magnitude.id].value);
            for other in [ls_v, m_v, &data.deviation, &data.presquash, &data.magnitude] {
                if other.shape() != mu_v.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "squashed_log_prob",
                        left: mu_v.shape(),
                        right: other.shape(),
                    });
                }
            }
            let mut out = Matrix::zeros(mu_v.rows(), mu_v.cols());
            for i in 0..out.len() {
                let e = squash::element(
                    data.deviation.data()[i],
                    data.presquash.data()[i],
                    data.magnitude.data()[i],
                    m_v.data()[i],
                );
                out.data_mut()[i] =
                    squash::log_prob_element(&e, mu_v.data()[i], ls_v.data()[i], m_v.data()[i]);
            }
            out
        };
        self.push(
            value,
            Op::SquashedLogProb { mu: mu.id, log_std: log_std.id, magnitude: magnitude.id, data },
            &[mu.id, log_std.id, magnitude.id],
        )
    }

    fn binary<'t>(
        &'t self,
        a: Var<'t>,
        b: Var<'t>,
        op: Op,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix, TensorError>,
    ) -> Result<Var<'t>, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.id].value, &nodes[b.id].value)?
        };
        self.push(value, op, &[a.id, b.id])
    }

    fn unary_op<'t>(
        &'t self,
        a: Var<'t>,
        op: Op,
        f: impl FnOnce(&Matrix) -> Result<Matrix, TensorError>,
    ) -> Result<Var<'t>, TensorError> {
        let value = self.with_value(a.id, f)?;
        self.push(value, op, &[a.id])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, seed: Var<'_>) -> Result<Gradients, TensorError> {
        if !std::ptr::eq(seed.tape, self) {
            return Err(TensorError::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[seed.id].value.shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; seed.id + 1];
        grads[seed.id] = Some(Matrix::scalar(1.0));
        for id in (0..=seed.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<(), TensorError> {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn col_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn broadcast_row(m: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| f(m.get(r, c), row.get(0, c)))
}

fn backprop(
    nodes: &[Node],
    node: &Node,
    g: &Matrix,
    grads: &mut [Option<Matrix>],
) -> Result<(), TensorError> {
    let needs = |id: NodeId| nodes[id].requires_grad;
    let val = |id: NodeId| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone())?;
            }
            if needs(*b) {
                accumulate(grads, *b, g.clone())?;
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone())?;
            }
            if needs(*b) {
                accumulate(grads, *b, g.scale(-1.0))?;
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.hadamard(val(*b))?)?;
            }
            if needs(*b) {
                accumulate(grads, *b, g.hadamard(val(*a))?)?;
            }
        }
        Op::MatMul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.matmul(&val(*b).transpose())?)?;
            }
            if needs(*b) {
                accumulate(grads, *b, val(*a).transpose().matmul(g)?)?;
            }
        }
        Op::AddRow(a, row) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone())?;
            }
            if needs(*row) {
                accumulate(grads, *row, col_sums(g))?;
            }
        }
        Op::MulRow(a, row) => {
            if needs(*a) {
                accumulate(grads, *a, broadcast_row(g, val(*row), |x, r| x * r))?;
            }
            if needs(*row) {
                accumulate(grads, *row, col_sums(&g.hadamard(val(*a))?))?;
            }
        }
        Op::Unary(a, u) => {
            if needs(*a) {
                let x = val(*a);
                let y = &node.value;
                let mut out = g.clone();
                for ((o, &xi), &yi) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *o *= u.derivative(xi, yi);
                }
                accumulate(grads, *a, out)?;
            }
        }
        Op::Transpose(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.transpose())?;
            }
        }
        Op::SelectRows(a, idx) => {
            if needs(*a) {
                let src = val(*a);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, v) in out.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, out)?;
            }
        }
        Op::SliceCols(a, start) => {
            if needs(*a) {
                let src = val(*a);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        out.set(r, start + c, g.get(r, c));
                    }
                }
                accumulate(grads, *a, out)?;
            }
        }
        Op::SumAll(a) => {
            if needs(*a) {
                let src = val(*a);
                accumulate(grads, *a, Matrix::filled(src.rows(), src.cols(), g.get(0, 0)))?;
            }
        }
        Op::MaskedSoftmax(a, mask) => {
            if needs(*a) {
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        if mask[r * y.cols() + c] {
                            out.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                }
                accumulate(grads, *a, out)?;
            }
        }
        Op::Clip(a, lo, hi) => {
            if needs(*a) {
                let x = val(*a);
                let out = g.zip_map(x, "clip_grad", |gi, xi| {
                    if xi >= *lo && xi <= *hi {
                        gi
                    } else {
                        0.0
                    }
                })?;
                accumulate(grads, *a, out)?;
            }
        }
        Op::Minimum(a, b) => {
            let (xa, xb) = (val(*a), val(*b));
            if needs(*a) {
                let mut out = g.clone();
                for ((o, &p), &q) in out.data_mut().iter_mut().zip(xa.data()).zip(xb.data()) {
                    if p > q {
                        *o = 0.0;
                    }
                }
                accumulate(grads, *a, out)?;
            }
            if needs(*b) {
                let mut out = g.clone();
                for ((o, &p), &q) in out.data_mut().iter_mut().zip(xa.data()).zip(xb.data()) {
                    if p <= q {
                        *o = 0.0;
                    }
                }
                accumulate(grads, *b, out)?;
            }
        }
        Op::SquashedLogProb { mu, log_std, magnitude, data } => {
            let (mu_v, ls_v, m_v) = (val(*mu), val(*log_std), val(*magnitude));
            let n = mu_v.len();
            let mut g_mu = Matrix::zeros(mu_v.rows(), mu_v.cols());
            let mut g_ls = g_mu.clone();
            let mut g_m = g_mu.clone();
            for i in 0..n {
                let e = squash::element(
                    data.deviation.data()[i],
                    data.presquash.data()[i],
                    data.magnitude.data()[i],
                    m_v.data()[i],
                );
                let d = squash::log_prob_partials(&e, mu_v.data()[i], ls_v.data()[i], m_v.data()[i]);
                let gi = g.data()[i];
                g_mu.data_mut()[i] = gi * d.mu;
                g_ls.data_mut()[i] = gi * d.log_std;
                g_m.data_mut()[i] = gi * d.magnitude;
            }
            if needs(*mu) {
                accumulate(grads, *mu, g_mu)?;
            }
            if needs(*log_std) {
                accumulate(grads, *log_std, g_ls)?;
            }
            if needs(*magnitude) {
                accumulate(grads, *magnitude, g_m)?;
            }
        }
    }
    Ok(())
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the seed.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Matrix {
        self.tape.value(self)
    }

    pub fn shape(self) -> (usize, usize) {
        self.tape.with_value(self.id, Matrix::shape)
    }

    /// Value of a 1x1 node.
    pub fn item(self) -> Result<f64, TensorError> {
        self.tape.with_value(self.id, Matrix::item)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, other, Op::Add(self.id, other.id), Matrix::add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, other, Op::Sub(self.id, other.id), Matrix::sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, other, Op::Mul(self.id, other.id), Matrix::hadamard)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, other, Op::MatMul(self.id, other.id), Matrix::matmul)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, row, Op::AddRow(self.id, row.id), |a, r| {
            check_row(a, r, "add_row")?;
            Ok(broadcast_row(a, r, |x, y| x + y))
        })
    }

    /// Scales every row element-wise by a `1 x cols` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, row, Op::MulRow(self.id, row.id), |a, r| {
            check_row(a, r, "mul_row")?;
            Ok(broadcast_row(a, r, |x, y| x * y))
        })
    }

    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.tape.binary(self, other, Op::Minimum(self.id, other.id), |a, b| {
            a.zip_map(b, "minimum", f64::min)
        })
    }

    pub fn map(self, u: Unary) -> Result<Var<'t>, TensorError> {
        self.tape.unary_op(self, Op::Unary(self.id, u), |m| Ok(m.map(|x| u.apply(x))))
    }

    pub fn neg(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Neg)
    }

    pub fn scale(self, k: f64) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Scale(k))
    }

    pub fn offset(self, k: f64) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Offset(k))
    }

    pub fn tanh(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Tanh)
    }

    pub fn exp(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Log)
    }

    pub fn sqrt(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Sqrt)
    }

    pub fn abs(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Abs)
    }

    pub fn square(self) -> Result<Var<'t>, TensorError> {
        self.map(Unary::Square)
    }

    pub fn transpose(self) -> Result<Var<'t>, TensorError> {
        self.tape.unary_op(self, Op::Transpose(self.id), |m| Ok(m.transpose()))
    }

    pub fn select_rows(self, idx: Arc<[usize]>) -> Result<Var<'t>, TensorError> {
        let op = Op::SelectRows(self.id, idx.clone());
        self.tape.unary_op(self, op, |m| m.select_rows(&idx))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        self.tape.unary_op(self, Op::SliceCols(self.id, start), |m| {
            if start + len > m.cols() {
                return Err(TensorError::IndexOutOfRange { index: start + len, len: m.cols() });
            }
            Ok(Matrix::from_fn(m.rows(), len, |r, c| m.get(r, start + c)))
        })
    }

    pub fn sum(self) -> Result<Var<'t>, TensorError> {
        self.tape.unary_op(self, Op::SumAll(self.id), |m| Ok(Matrix::scalar(m.sum())))
    }

    pub fn mean(self) -> Result<Var<'t>, TensorError> {
        let n = self.shape();
        self.sum()?.scale(1.0 / (n.0 * n.1).max(1) as f64)
    }

    pub fn clip(self, lo: f64, hi: f64) -> Result<Var<'t>, TensorError> {
        self.tape.unary_op(self, Op::Clip(self.id, lo, hi), |m| Ok(m.map(|x| x.clamp(lo, hi))))
    }
}

fn check_row(a: &Matrix, r: &Matrix, op: &'static str) -> Result<(), TensorError> {
    if r.rows() != 1 || r.cols() != a.cols() {
        return Err(TensorError::ShapeMismatch { op, left: a.shape(), right: r.shape() });
    }
    Ok(())
}

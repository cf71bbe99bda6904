use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::tensor::{Shape, Tensor};
use super::AutodiffError;

pub type NodeId = usize;

type Result<T> = std::result::Result<T, AutodiffError>;

/// A value produced on a [`Tape`].
///
/// Vars are cheap to clone: the tensor is reference counted. A Var without a
/// node id is a constant; gradients never flow into it.
#[derive(Clone)]
pub struct Var {
    id: Option<NodeId>,
    value: Rc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn id(&self) -> Option<NodeId> {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Square,
    Sin,
    Cos,
    Exp,
    Relu,
    /// ELU with alpha = 1.
    Elu,
    Sqrt,
    Scale(f64),
    Offset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Min,
    Max,
}

enum Op {
    Leaf,
    Unary {
        kind: UnaryOp,
        input: Var,
        out: Rc<Tensor>,
    },
    Binary {
        kind: BinaryOp,
        a: Var,
        b: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        row: Var,
    },
    Reduce {
        input: Var,
        kind: ReduceOp,
        arg: usize,
    },
    ReduceAxis {
        input: Var,
        axis: usize,
        mean: bool,
    },
    Softmax {
        input: Var,
        out: Rc<Tensor>,
    },
    Gather {
        input: Var,
        index: Arc<[Option<usize>]>,
    },
    ScatterAdd {
        input: Var,
        index: Arc<[usize]>,
    },
    Reshape {
        input: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
}

struct Node {
    op: Op,
    shape: Shape,
}

/// Reverse-mode tape. Node ids increase in creation order, so the node list
/// is a topological order of the computation.
///
/// An inference tape (see [`Tape::inference`]) runs the same kernels without
/// recording anything, which keeps plain and differentiable evaluations
/// bitwise identical.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input. On an inference tape this is a constant.
    pub fn leaf(&self, value: Tensor) -> Var {
        if !self.recording {
            return self.constant(value);
        }
        let shape = Shape::from_slice(value.shape());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op: Op::Leaf, shape });
        Var {
            id: Some(id),
            value: Rc::new(value),
        }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    fn push(&self, value: Tensor, tracked: bool, op: impl FnOnce(&Rc<Tensor>) -> Op) -> Var {
        let value = Rc::new(value);
        if !(self.recording && tracked) {
            return Var { id: None, value };
        }
        let shape = Shape::from_slice(value.shape());
        let op = op(&value);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, shape });
        Var {
            id: Some(id),
            value,
        }
    }

    pub fn unary(&self, kind: UnaryOp, a: &Var) -> Var {
        let f: fn(f64, f64) -> f64 = match kind {
            UnaryOp::Neg => |x, _| -x,
            UnaryOp::Square => |x, _| x * x,
            UnaryOp::Sin => |x, _| x.sin(),
            UnaryOp::Cos => |x, _| x.cos(),
            UnaryOp::Exp => |x, _| x.exp(),
            UnaryOp::Relu => |x, _| if x > 0.0 { x } else { 0.0 },
            UnaryOp::Elu => |x, _| if x > 0.0 { x } else { x.exp_m1() },
            UnaryOp::Sqrt => |x, _| x.sqrt(),
            UnaryOp::Scale(_) => |x, c| x * c,
            UnaryOp::Offset(_) => |x, c| x + c,
        };
        let c = match kind {
            UnaryOp::Scale(c) | UnaryOp::Offset(c) => c,
            _ => 0.0,
        };
        let value = a.value.map(|x| f(x, c));
        self.push(value, a.is_tracked(), |out| Op::Unary {
            kind,
            input: a.clone(),
            out: out.clone(),
        })
    }

    pub fn neg(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }
    pub fn square(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }
    pub fn sin(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Sin, a)
    }
    pub fn cos(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Cos, a)
    }
    pub fn exp(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }
    pub fn relu(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }
    pub fn elu(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Elu, a)
    }
    pub fn sqrt(&self, a: &Var) -> Var {
        self.unary(UnaryOp::Sqrt, a)
    }
    pub fn scale(&self, a: &Var, c: f64) -> Var {
        self.unary(UnaryOp::Scale(c), a)
    }
    pub fn offset(&self, a: &Var, c: f64) -> Var {
        self.unary(UnaryOp::Offset(c), a)
    }

    /// Elementwise binary op. Shapes must match, except that a
    /// single-element operand is broadcast against the other.
    pub fn binary(&self, kind: BinaryOp, a: &Var, b: &Var) -> Result<Var> {
        let (sa, sb) = (a.value.shape(), b.value.shape());
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let (ad, bd) = (a.value.data(), b.value.data());
        let value = if sa == sb {
            Tensor::new(sa, ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect())
        } else if b.value.is_scalar() {
            let y = bd[0];
            Tensor::new(sa, ad.iter().map(|&x| f(x, y)).collect())
        } else if a.value.is_scalar() {
            let x = ad[0];
            Tensor::new(sb, bd.iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: match kind {
                    BinaryOp::Add => "add",
                    BinaryOp::Sub => "sub",
                    BinaryOp::Mul => "mul",
                },
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        };
        Ok(self.push(value, a.is_tracked() || b.is_tracked(), |_| Op::Binary {
            kind,
            a: a.clone(),
            b: b.clone(),
        }))
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }
    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }
    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        let (sa, sb) = (a.value.shape(), b.value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = Tensor::matrix(m, n, matmul_kernel(a.value.data(), b.value.data(), m, k, n));
        Ok(self.push(value, a.is_tracked() || b.is_tracked(), |_| Op::MatMul {
            a: a.clone(),
            b: b.clone(),
        }))
    }

    /// Adds `row` (shape `[c]`) to every row of `a` (shape `[r, c]`).
    pub fn add_row(&self, a: &Var, row: &Var) -> Result<Var> {
        let (sa, sr) = (a.value.shape(), row.value.shape());
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: sa.to_vec(),
                right: sr.to_vec(),
            });
        }
        let c = sa[1];
        let rd = row.value.data();
        let data = a
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rd[i % c])
            .collect();
        let value = Tensor::new(sa, data);
        Ok(self.push(value, a.is_tracked() || row.is_tracked(), |_| Op::AddRow {
            a: a.clone(),
            row: row.clone(),
        }))
    }

    /// Full reduction to a rank-0 tensor. `Min` and `Max` route the gradient
    /// to the first index attaining the extremum.
    pub fn reduce(&self, kind: ReduceOp, a: &Var) -> Result<Var> {
        let d = a.value.data();
        if d.is_empty() {
            return Err(AutodiffError::Empty { op: "reduce" });
        }
        let (v, arg) = match kind {
            ReduceOp::Sum => (d.iter().sum(), 0),
            ReduceOp::Mean => (d.iter().sum::<f64>() / d.len() as f64, 0),
            ReduceOp::Min => first_extremum(d, |x, best| x < best),
            ReduceOp::Max => first_extremum(d, |x, best| x > best),
        };
        Ok(self.push(Tensor::scalar(v), a.is_tracked(), |_| Op::Reduce {
            input: a.clone(),
            kind,
            arg,
        }))
    }

    pub fn sum(&self, a: &Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a)
    }
    pub fn mean(&self, a: &Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a)
    }
    pub fn min(&self, a: &Var) -> Result<Var> {
        self.reduce(ReduceOp::Min, a)
    }
    pub fn max(&self, a: &Var) -> Result<Var> {
        self.reduce(ReduceOp::Max, a)
    }

    fn reduce_axis(&self, a: &Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = a.value.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                shape: shape.to_vec(),
            });
        }
        let extent = shape[axis];
        if extent == 0 || a.value.is_empty() {
            return Err(AutodiffError::Empty { op: "reduce_axis" });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = a.value.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (acc, &x) in dst.iter_mut().zip(&d[base..base + inner]) {
                    *acc += x;
                }
            }
        }
        if mean {
            let s = 1.0 / extent as f64;
            out.iter_mut().for_each(|v| *v *= s);
        }
        let mut out_shape: Vec<usize> = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out);
        Ok(self.push(value, a.is_tracked(), |_| Op::ReduceAxis {
            input: a.clone(),
            axis,
            mean,
        }))
    }

    pub fn sum_axis(&self, a: &Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&self, a: &Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Softmax over a 1-D tensor, computed after subtracting the maximum.
    pub fn softmax(&self, a: &Var) -> Result<Var> {
        let shape = a.value.shape();
        if shape.len() != 1 {
            return Err(AutodiffError::RankMismatch {
                op: "softmax",
                expected: 1,
                shape: shape.to_vec(),
            });
        }
        let d = a.value.data();
        if d.is_empty() {
            return Err(AutodiffError::Empty { op: "softmax" });
        }
        let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = d.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let value = Tensor::new(shape, e.into_iter().map(|v| v / z).collect());
        Ok(self.push(value, a.is_tracked(), |out| Op::Softmax {
            input: a.clone(),
            out: out.clone(),
        }))
    }

    /// `out[i] = a.flat[index[i]]`, or zero where the index is `None`.
    pub fn gather(&self, a: &Var, index: &Arc<[Option<usize>]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                left: vec![index.len()],
                right: shape.to_vec(),
            });
        }
        let d = a.value.data();
        let mut out = Vec::with_capacity(n);
        for idx in index.iter() {
            match *idx {
                Some(j) if j < d.len() => out.push(d[j]),
                Some(j) => {
                    return Err(AutodiffError::IndexOutOfBounds {
                        index: j,
                        len: d.len(),
                    })
                }
                None => out.push(0.0),
            }
        }
        Ok(self.push(Tensor::new(shape, out), a.is_tracked(), |_| Op::Gather {
            input: a.clone(),
            index: index.clone(),
        }))
    }

    /// `out[index[i]] += a.flat[i]` into a zero vector of length `len`.
    pub fn scatter_add(&self, a: &Var, index: &Arc<[usize]>, len: usize) -> Result<Var> {
        let d = a.value.data();
        if d.len() != index.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_add",
                left: a.value.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        let mut out = vec![0.0; len];
        for (&x, &j) in d.iter().zip(index.iter()) {
            if j >= len {
                return Err(AutodiffError::IndexOutOfBounds { index: j, len });
            }
            out[j] += x;
        }
        Ok(self.push(Tensor::vector(out), a.is_tracked(), |_| Op::ScatterAdd {
            input: a.clone(),
            index: index.clone(),
        }))
    }

    pub fn reshape(&self, a: &Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != a.value.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: a.value.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = (*a.value).clone().reshaped(shape);
        Ok(self.push(value, a.is_tracked(), |_| Op::Reshape { input: a.clone() }))
    }

    /// Flattens and concatenates the parts into one 1-D tensor.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::Empty { op: "concat" });
        }
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.value.len()).sum());
        for p in parts {
            out.extend_from_slice(p.value.data());
        }
        let tracked = parts.iter().any(Var::is_tracked);
        Ok(self.push(Tensor::vector(out), tracked, |_| Op::Concat {
            parts: parts.to_vec(),
        }))
    }

    /// Reverse sweep from a scalar loss. Every node reachable from the loss
    /// receives its total derivative; anything else reads as zero.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if !loss.value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(loss.value.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::new(loss.value.shape(), vec![1.0]));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&nodes[id], &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn first_extremum(d: &[f64], better: impl Fn(f64, f64) -> bool) -> (f64, usize) {
    let mut best = d[0];
    let mut arg = 0;
    for (i, &x) in d.iter().enumerate().skip(1) {
        if better(x, best) {
            best = x;
            arg = i;
        }
    }
    (best, arg)
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], var: &Var, g: Tensor) {
    let Some(id) = var.id else { return };
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradient for a broadcast operand: sums over the broadcast axis when the
/// operand was a single element standing in for a full tensor.
fn fit_to(var: &Var, full: Vec<f64>, out_shape: &[usize]) -> Tensor {
    if var.value.shape() == out_shape {
        Tensor::new(out_shape, full)
    } else {
        Tensor::new(var.value.shape(), vec![full.iter().sum()])
    }
}

fn propagate(node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::Unary { kind, input, out } => {
            if !input.is_tracked() {
                return;
            }
            let x = input.value.data();
            let y = out.data();
            let d: Vec<f64> = match *kind {
                UnaryOp::Neg => gd.iter().map(|g| -g).collect(),
                UnaryOp::Square => zip2(gd, x, |g, x| 2.0 * x * g),
                UnaryOp::Sin => zip2(gd, x, |g, x| x.cos() * g),
                UnaryOp::Cos => zip2(gd, x, |g, x| -x.sin() * g),
                UnaryOp::Exp => zip2(gd, y, |g, y| y * g),
                UnaryOp::Relu => zip2(gd, x, |g, x| if x > 0.0 { g } else { 0.0 }),
                UnaryOp::Elu => gd
                    .iter()
                    .zip(x)
                    .zip(y)
                    .map(|((&g, &x), &y)| if x > 0.0 { g } else { (y + 1.0) * g })
                    .collect(),
                UnaryOp::Sqrt => zip2(gd, y, |g, y| g / (2.0 * y)),
                UnaryOp::Scale(c) => gd.iter().map(|g| c * g).collect(),
                UnaryOp::Offset(_) => gd.to_vec(),
            };
            accumulate(grads, input, Tensor::new(input.value.shape(), d));
        }
        Op::Binary { kind, a, b } => {
            let shape = &node.shape;
            let n = gd.len();
            let at = |i: usize| a.value.data()[if a.value.len() == n { i } else { 0 }];
            let bt = |i: usize| b.value.data()[if b.value.len() == n { i } else { 0 }];
            if a.is_tracked() {
                let full: Vec<f64> = match kind {
                    BinaryOp::Add | BinaryOp::Sub => gd.to_vec(),
                    BinaryOp::Mul => (0..n).map(|i| gd[i] * bt(i)).collect(),
                };
                accumulate(grads, a, fit_to(a, full, shape));
            }
            if b.is_tracked() {
                let full: Vec<f64> = match kind {
                    BinaryOp::Add => gd.to_vec(),
                    BinaryOp::Sub => gd.iter().map(|g| -g).collect(),
                    BinaryOp::Mul => (0..n).map(|i| gd[i] * at(i)).collect(),
                };
                accumulate(grads, b, fit_to(b, full, shape));
            }
        }
        Op::MatMul { a, b } => {
            let (m, k) = (a.value.shape()[0], a.value.shape()[1]);
            let n = b.value.shape()[1];
            if a.is_tracked() {
                // g [m,n] . b^T [n,k]
                let bd = b.value.data();
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += gd[i * n + j] * bd[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                accumulate(grads, a, Tensor::matrix(m, k, ga));
            }
            if b.is_tracked() {
                // a^T [k,m] . g [m,n]
                let ad = a.value.data();
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let dst = &mut gb[p * n..(p + 1) * n];
                        for (o, &gv) in dst.iter_mut().zip(&gd[i * n..(i + 1) * n]) {
                            *o += av * gv;
                        }
                    }
                }
                accumulate(grads, b, Tensor::matrix(k, n, gb));
            }
        }
        Op::AddRow { a, row } => {
            if a.is_tracked() {
                accumulate(grads, a, Tensor::new(a.value.shape(), gd.to_vec()));
            }
            if row.is_tracked() {
                let c = row.value.len();
                let mut gr = vec![0.0; c];
                for (i, &g) in gd.iter().enumerate() {
                    gr[i % c] += g;
                }
                accumulate(grads, row, Tensor::new(row.value.shape(), gr));
            }
        }
        Op::Reduce { input, kind, arg } => {
            if !input.is_tracked() {
                return;
            }
            let n = input.value.len();
            let g0 = gd[0];
            let d = match kind {
                ReduceOp::Sum => vec![g0; n],
                ReduceOp::Mean => vec![g0 / n as f64; n],
                ReduceOp::Min | ReduceOp::Max => {
                    let mut d = vec![0.0; n];
                    d[*arg] = g0;
                    d
                }
            };
            accumulate(grads, input, Tensor::new(input.value.shape(), d));
        }
        Op::ReduceAxis { input, axis, mean } => {
            if !input.is_tracked() {
                return;
            }
            let shape = input.value.shape();
            let extent = shape[*axis];
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let s = if *mean { 1.0 / extent as f64 } else { 1.0 };
            let mut d = vec![0.0; input.value.len()];
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner;
                    for t in 0..inner {
                        d[base + t] = gd[o * inner + t] * s;
                    }
                }
            }
            accumulate(grads, input, Tensor::new(shape, d));
        }
        Op::Softmax { input, out } => {
            if !input.is_tracked() {
                return;
            }
            let y = out.data();
            let dot: f64 = gd.iter().zip(y).map(|(g, y)| g * y).sum();
            let d = zip2(gd, y, |g, y| y * (g - dot));
            accumulate(grads, input, Tensor::new(input.value.shape(), d));
        }
        Op::Gather { input, index } => {
            if !input.is_tracked() {
                return;
            }
            let mut d = vec![0.0; input.value.len()];
            for (&g, idx) in gd.iter().zip(index.iter()) {
                if let Some(j) = *idx {
                    d[j] += g;
                }
            }
            accumulate(grads, input, Tensor::new(input.value.shape(), d));
        }
        Op::ScatterAdd { input, index } => {
            if !input.is_tracked() {
                return;
            }
            let d = index.iter().map(|&j| gd[j]).collect();
            accumulate(grads, input, Tensor::new(input.value.shape(), d));
        }
        Op::Reshape { input } => {
            if input.is_tracked() {
                accumulate(grads, input, Tensor::new(input.value.shape(), gd.to_vec()));
            }
        }
        Op::Concat { parts } => {
            let mut off = 0;
            for p in parts {
                let n = p.value.len();
                if p.is_tracked() {
                    accumulate(grads, p, Tensor::new(p.value.shape(), gd[off..off + n].to_vec()));
                }
                off += n;
            }
        }
    }
}

fn zip2(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

/// Result of [`Tape::backward`]: one optional gradient per tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.id.and_then(|id| self.grads.get(id)).and_then(Option::as_ref)
    }

    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

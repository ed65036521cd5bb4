//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Graph`]. Gradients are produced by
//! walking the tape backwards and emitting the adjoint computation as *new*
//! graph operations, so the gradients are themselves differentiable: calling
//! [`Graph::grad`] and then differentiating a function of the result yields
//! exact second-order and mixed derivatives.
//!
//! [`Graph::backward`] is the first-order convenience: it runs the same
//! adjoint pass, copies the gradient values out and discards every node the
//! pass appended.
//!
//! ```
//! use vsmeta::graph::Graph;
//! use vsmeta::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let dy = g.grad(y, &[x]).unwrap()[0];
//! assert_eq!(g.value(dy).item(), 6.0);
//! let d2y = g.backward(dy, &[x]).unwrap();
//! assert_eq!(d2y[0].item(), 2.0);
//! ```
//!
//! Elementwise binary ops accept operands of identical shape, or one operand
//! holding a single element (scalar broadcast). There is no general
//! broadcasting; row-bias addition is a dedicated op.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(T),
    Sigmoid,
    Tanh,
    Abs,
    /// Sign function; its derivative is taken to be zero everywhere.
    Sign,
    MatMul,
    Transpose,
    Sum,
    /// Broadcast a single element to the given shape.
    Expand(Vec<usize>),
    Reshape(Vec<usize>),
    /// Rectangular block of a matrix: `rows x cols` starting at `(r0, c0)`.
    Slice {
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    },
    /// Place a matrix into a zero matrix of shape `rows x cols` at `(r0, c0)`.
    Embed {
        r0: usize,
        c0: usize,
        rows: usize,
        cols: usize,
    },
    ConcatRows,
    ConcatCols,
    /// `[R x C] + [C]`, bias repeated over rows.
    AddRowBias,
    /// `[R x C] -> [C]`.
    SumRows,
    /// `[C] -> [R x C]`.
    BroadcastRows(usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Sign => "sign",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::Expand(_) => "expand",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Embed { .. } => "embed",
            Op::ConcatRows => "concat_rows",
            Op::ConcatCols => "concat_cols",
            Op::AddRowBias => "add_row_bias",
            Op::SumRows => "sum_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Pending gradient contribution for one node.
enum Contribution {
    Dense(Var),
    /// Gradient of a slice: only the block at `(r0, c0)` is non-zero.
    Block { r0: usize, c0: usize, grad: Var },
}

/// Append-only computation tape. Single owner; build one per training step.
#[derive(Clone, Debug, Default)]
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn binary_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(mismatch(op, a.shape(), b.shape()))
    }
}

fn zip_broadcast<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let shape = binary_shape(op, a, b)?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = match (ad.len() == n, bd.len() == n) {
        (true, true) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        (true, false) => ad.iter().map(|&x| f(x, bd[0])).collect(),
        (false, true) => bd.iter().map(|&y| f(ad[0], y)).collect(),
        (false, false) => vec![f(ad[0], bd[0])],
    };
    Tensor::new(shape, data)
}

fn matmul_kernel<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(mismatch("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

fn transpose_kernel<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = a.dims2("transpose")?;
    let d = a.data();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(d[i * c + j]);
        }
    }
    Tensor::matrix(c, r, out)
}

/// Forward kernel shared by recording and replay.
fn eval_op<T: Real>(op: &Op<T>, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let name = op.name();
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("leaves carry their own value"),
        Op::Add => zip_broadcast(name, xs[0], xs[1], |a, b| a + b)?,
        Op::Sub => zip_broadcast(name, xs[0], xs[1], |a, b| a - b)?,
        Op::Mul => zip_broadcast(name, xs[0], xs[1], |a, b| a * b)?,
        Op::Neg => xs[0].map(|a| -a),
        Op::Scale(c) => {
            let c = *c;
            xs[0].map(|a| a * c)
        }
        Op::Sigmoid => xs[0].map(|a| T::one() / (T::one() + (-a).exp())),
        Op::Tanh => xs[0].map(T::tanh),
        Op::Abs => xs[0].map(T::abs),
        Op::Sign => xs[0].map(|a| {
            if a > T::zero() {
                T::one()
            } else if a < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }),
        Op::MatMul => matmul_kernel(xs[0], xs[1])?,
        Op::Transpose => transpose_kernel(xs[0])?,
        Op::Sum => Tensor::scalar(xs[0].data().iter().copied().fold(T::zero(), |s, x| s + x)),
        Op::Expand(shape) => {
            if xs[0].len() != 1 {
                return Err(mismatch(name, xs[0].shape(), shape));
            }
            Tensor::full(shape, xs[0].item())
        }
        Op::Reshape(shape) => xs[0].reshaped(shape)?,
        Op::Slice { r0, c0, rows, cols } => {
            let (r, c) = xs[0].dims2(name)?;
            if r0 + rows > r || c0 + cols > c {
                return Err(mismatch(name, xs[0].shape(), &[r0 + rows, c0 + cols]));
            }
            let mut out = Vec::with_capacity(rows * cols);
            for i in *r0..r0 + rows {
                out.extend_from_slice(&xs[0].row(i)[*c0..c0 + cols]);
            }
            Tensor::matrix(*rows, *cols, out)?
        }
        Op::Embed { r0, c0, rows, cols } => {
            let (r, c) = xs[0].dims2(name)?;
            if r0 + r > *rows || c0 + c > *cols {
                return Err(mismatch(name, xs[0].shape(), &[*rows, *cols]));
            }
            let mut out = vec![T::zero(); rows * cols];
            for i in 0..r {
                let dst = (r0 + i) * cols + c0;
                out[dst..dst + c].copy_from_slice(xs[0].row(i));
            }
            Tensor::matrix(*rows, *cols, out)?
        }
        Op::ConcatRows => {
            let (_, cols) = xs[0].dims2(name)?;
            let mut rows = 0;
            let mut out = Vec::new();
            for x in xs {
                let (r, c) = x.dims2(name)?;
                if c != cols {
                    return Err(mismatch(name, xs[0].shape(), x.shape()));
                }
                rows += r;
                out.extend_from_slice(x.data());
            }
            Tensor::matrix(rows, cols, out)?
        }
        Op::ConcatCols => {
            let (rows, _) = xs[0].dims2(name)?;
            let mut widths = Vec::with_capacity(xs.len());
            for x in xs {
                let (r, c) = x.dims2(name)?;
                if r != rows {
                    return Err(mismatch(name, xs[0].shape(), x.shape()));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for x in xs {
                    out.extend_from_slice(x.row(i));
                }
            }
            Tensor::matrix(rows, total, out)?
        }
        Op::AddRowBias => {
            let (r, c) = xs[0].dims2(name)?;
            if xs[1].shape() != [c] {
                return Err(mismatch(name, xs[0].shape(), xs[1].shape()));
            }
            let b = xs[1].data();
            let mut out = xs[0].data().to_vec();
            for i in 0..r {
                for (o, &bv) in out[i * c..(i + 1) * c].iter_mut().zip(b) {
                    *o = *o + bv;
                }
            }
            Tensor::matrix(r, c, out)?
        }
        Op::SumRows => {
            let (r, c) = xs[0].dims2(name)?;
            let mut out = vec![T::zero(); c];
            for i in 0..r {
                for (o, &v) in out.iter_mut().zip(xs[0].row(i)) {
                    *o = *o + v;
                }
            }
            Tensor::vector(out)?
        }
        Op::BroadcastRows(rows) => {
            if xs[0].rank() != 1 {
                return Err(mismatch(name, xs[0].shape(), &[0]));
            }
            let c = xs[0].len();
            let mut out = Vec::with_capacity(rows * c);
            for _ in 0..*rows {
                out.extend_from_slice(xs[0].data());
            }
            Tensor::matrix(*rows, c, out)?
        }
    };
    Ok(out)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input (data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            inputs: Vec::new(),
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>, inputs: Vec<Var>) -> Result<Var> {
        let value = {
            let xs: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            eval_op(&op, &xs)?
        };
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad =
            !matches!(op, Op::Sign) && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul, vec![a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg, vec![a])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.record(Op::Scale(c), vec![a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid, vec![a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh, vec![a])
    }

    /// `|a|`, with subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Abs, vec![a])
    }

    pub fn sign(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sign, vec![a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul, vec![a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose, vec![a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_usize(n).expect("length fits"))
    }

    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Expand(shape.to_vec()), vec![a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(shape.to_vec()), vec![a])
    }

    pub fn slice(&mut self, a: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var> {
        self.record(Op::Slice { r0, c0, rows, cols }, vec![a])
    }

    pub fn embed(&mut self, a: Var, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Var> {
        self.record(Op::Embed { r0, c0, rows, cols }, vec![a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows of nothing"));
        }
        self.record(Op::ConcatRows, parts.to_vec())
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of nothing"));
        }
        self.record(Op::ConcatCols, parts.to_vec())
    }

    pub fn add_row_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddRowBias, vec![m, bias])
    }

    pub fn sum_rows(&mut self, m: Var) -> Result<Var> {
        self.record(Op::SumRows, vec![m])
    }

    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        self.record(Op::BroadcastRows(rows), vec![v])
    }

    /// `(1/T) * sum_t |pred_t - target_t|` for equal-length vectors.
    pub fn mean_abs_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ps, ts) = (self.value(pred).shape(), self.value(target).shape());
        if ps != ts || ps.len() != 1 {
            return Err(mismatch("mean_abs_error", ps, ts));
        }
        let d = self.sub(pred, target)?;
        let a = self.abs(d)?;
        self.mean(a)
    }

    /// Differentiable gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// The returned variables live in this graph, so they can be combined
    /// and differentiated again. A `wrt` entry the loss does not depend on
    /// receives a zero gradient.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let grads = self.backprop(loss, wrt)?;
        grads
            .into_iter()
            .zip(wrt)
            .map(|(g, &w)| match g {
                Some(g) => Ok(g),
                None => {
                    let z = Tensor::zeros(self.value(w).shape());
                    Ok(self.constant(z))
                }
            })
            .collect()
    }

    /// First-order gradients as plain tensors. The tape is left exactly as
    /// it was before the call.
    pub fn backward(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let mark = self.nodes.len();
        let result = self.backprop(loss, wrt).map(|grads| {
            grads
                .into_iter()
                .zip(wrt)
                .map(|(g, &w)| match g {
                    Some(g) => self.value(g).clone(),
                    None => Tensor::zeros(self.value(w).shape()),
                })
                .collect()
        });
        self.nodes.truncate(mark);
        result
    }

    fn backprop(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Option<Var>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let end = loss.0 + 1;
        // needed[i]: node i lies on a path from some `wrt` entry.
        let mut needed = vec![false; end];
        let mut is_target = vec![false; end];
        for w in wrt {
            if w.0 < end {
                is_target[w.0] = true;
                needed[w.0] = true;
            }
        }
        for i in 0..end {
            if !needed[i] && self.nodes[i].requires_grad {
                needed[i] = self.nodes[i].inputs.iter().any(|v| needed[v.0]);
            }
        }
        if !needed[loss.0] {
            return Ok(vec![None; wrt.len()]);
        }

        let mut pending: Vec<Vec<Contribution>> = (0..end).map(|_| Vec::new()).collect();
        let mut done: Vec<Option<Var>> = vec![None; end];
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        let seed = self.constant(seed);
        pending[loss.0].push(Contribution::Dense(seed));

        for id in (0..end).rev() {
            if !needed[id] || pending[id].is_empty() {
                continue;
            }
            let contributions = std::mem::take(&mut pending[id]);
            let g = self.accumulate(Var(id), contributions)?;
            if is_target[id] {
                done[id] = Some(g);
            }
            let op = self.nodes[id].op.clone();
            let inputs = self.nodes[id].inputs.clone();
            let out = Var(id);
            for (slot, contribution) in self.adjoint(&op, &inputs, out, g)? {
                if needed[inputs[slot].0] {
                    pending[inputs[slot].0].push(contribution);
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| if w.0 < end { done[w.0] } else { None })
            .collect())
    }

    /// Sum the pending contributions for `node` into one gradient variable.
    fn accumulate(&mut self, node: Var, contributions: Vec<Contribution>) -> Result<Var> {
        let shape = self.value(node).shape().to_vec();
        let mut dense = Vec::new();
        let mut row_blocks = Vec::new();
        for c in contributions {
            match c {
                Contribution::Dense(v) => dense.push(v),
                Contribution::Block { r0, c0, grad } => {
                    let (rows, cols) = (shape[0], shape[1]);
                    let (_, bc) = self.value(grad).dims2("accumulate")?;
                    if c0 == 0 && bc == cols {
                        row_blocks.push((r0, grad));
                    } else {
                        dense.push(self.embed(grad, r0, c0, rows, cols)?);
                    }
                }
            }
        }
        if !row_blocks.is_empty() {
            // Full-width row blocks: stitch disjoint ones together with a single
            // concat instead of one full-size embed per block.
            let (rows, cols) = (shape[0], shape[1]);
            row_blocks.sort_by_key(|&(r0, _)| r0);
            let mut parts = Vec::new();
            let mut cursor = 0;
            for (r0, grad) in row_blocks {
                let h = self.value(grad).shape()[0];
                if r0 < cursor {
                    dense.push(self.embed(grad, r0, 0, rows, cols)?);
                    continue;
                }
                if r0 > cursor {
                    parts.push(self.constant(Tensor::zeros(&[r0 - cursor, cols])));
                }
                parts.push(grad);
                cursor = r0 + h;
            }
            if cursor < rows {
                parts.push(self.constant(Tensor::zeros(&[rows - cursor, cols])));
            }
            let stitched = if parts.len() == 1 {
                parts[0]
            } else {
                self.concat_rows(&parts)?
            };
            dense.insert(0, stitched);
        }
        let mut acc = dense[0];
        for &v in &dense[1..] {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Reduce a broadcast gradient back to the shape of a single-element input.
    fn unbroadcast(&mut self, g: Var, input: Var) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        if self.value(g).shape() == in_shape.as_slice() {
            return Ok(g);
        }
        let s = self.sum(g)?;
        if in_shape.is_empty() {
            Ok(s)
        } else {
            self.reshape(s, &in_shape)
        }
    }

    /// Vector-Jacobian products for one node, expressed as graph operations.
    fn adjoint(
        &mut self,
        op: &Op<T>,
        inputs: &[Var],
        out: Var,
        g: Var,
    ) -> Result<Vec<(usize, Contribution)>> {
        use Contribution::{Block, Dense};
        let mut res = Vec::with_capacity(inputs.len());
        match op {
            Op::Leaf | Op::Constant | Op::Sign => {}
            Op::Add => {
                res.push((0, Dense(self.unbroadcast(g, inputs[0])?)));
                res.push((1, Dense(self.unbroadcast(g, inputs[1])?)));
            }
            Op::Sub => {
                res.push((0, Dense(self.unbroadcast(g, inputs[0])?)));
                let n = self.neg(g)?;
                res.push((1, Dense(self.unbroadcast(n, inputs[1])?)));
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.requires_grad(a) {
                    let ga = self.mul(g, b)?;
                    res.push((0, Dense(self.unbroadcast(ga, a)?)));
                }
                if self.requires_grad(b) {
                    let gb = self.mul(g, a)?;
                    res.push((1, Dense(self.unbroadcast(gb, b)?)));
                }
            }
            Op::Neg => res.push((0, Dense(self.neg(g)?))),
            Op::Scale(c) => res.push((0, Dense(self.scale(g, *c)?))),
            Op::Sigmoid => {
                // y' = y - y^2
                let yy = self.mul(out, out)?;
                let d = self.sub(out, yy)?;
                res.push((0, Dense(self.mul(g, d)?)));
            }
            Op::Tanh => {
                // y' = 1 - y^2
                let yy = self.mul(out, out)?;
                let gyy = self.mul(g, yy)?;
                res.push((0, Dense(self.sub(g, gyy)?)));
            }
            Op::Abs => {
                let s = self.sign(inputs[0])?;
                res.push((0, Dense(self.mul(g, s)?)));
            }
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.requires_grad(a) {
                    let bt = self.transpose(b)?;
                    res.push((0, Dense(self.matmul(g, bt)?)));
                }
                if self.requires_grad(b) {
                    let at = self.transpose(a)?;
                    res.push((1, Dense(self.matmul(at, g)?)));
                }
            }
            Op::Transpose => res.push((0, Dense(self.transpose(g)?))),
            Op::Sum => {
                let shape = self.value(inputs[0]).shape().to_vec();
                res.push((0, Dense(self.expand(g, &shape)?)));
            }
            Op::Expand(_) => {
                let s = self.sum(g)?;
                let shape = self.value(inputs[0]).shape().to_vec();
                let s = if shape.is_empty() { s } else { self.reshape(s, &shape)? };
                res.push((0, Dense(s)));
            }
            Op::Reshape(_) => {
                let shape = self.value(inputs[0]).shape().to_vec();
                res.push((0, Dense(self.reshape(g, &shape)?)));
            }
            Op::Slice { r0, c0, .. } => res.push((
                0,
                Block {
                    r0: *r0,
                    c0: *c0,
                    grad: g,
                },
            )),
            Op::Embed { r0, c0, .. } => {
                let (rows, cols) = self.value(inputs[0]).dims2("embed")?;
                res.push((0, Dense(self.slice(g, *r0, rows, *c0, cols)?)));
            }
            Op::ConcatRows => {
                let mut offset = 0;
                for (slot, &x) in inputs.iter().enumerate() {
                    let (rows, cols) = self.value(x).dims2("concat_rows")?;
                    if self.requires_grad(x) {
                        res.push((slot, Dense(self.slice(g, offset, rows, 0, cols)?)));
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols => {
                let mut offset = 0;
                for (slot, &x) in inputs.iter().enumerate() {
                    let (rows, cols) = self.value(x).dims2("concat_cols")?;
                    if self.requires_grad(x) {
                        res.push((slot, Dense(self.slice(g, 0, rows, offset, cols)?)));
                    }
                    offset += cols;
                }
            }
            Op::AddRowBias => {
                res.push((0, Dense(g)));
                if self.requires_grad(inputs[1]) {
                    res.push((1, Dense(self.sum_rows(g)?)));
                }
            }
            Op::SumRows => {
                let (rows, _) = self.value(inputs[0]).dims2("sum_rows")?;
                res.push((0, Dense(self.broadcast_rows(g, rows)?)));
            }
            Op::BroadcastRows(_) => res.push((0, Dense(self.sum_rows(g)?))),
        }
        Ok(res)
    }

    /// Recompute every node from the recorded leaves and ops.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                ref op => {
                    let xs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &values[v.0]).collect();
                    eval_op(op, &xs)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when replaying the tape reproduces every stored value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed
            .iter()
            .zip(&self.nodes)
            .all(|(r, n)| r.bit_eq(&n.value)))
    }
}

//! Reverse-mode tape. Nodes are appended in evaluation order, so the node
//! index is already a topological order and backward is a single reverse
//! sweep.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, check_rank, check_same_shape};
use super::{ParamId, ParamStore, Result, Tensor, TensorError};
use crate::scalar::Scalar;

type NodeId = usize;

/// Reduction applied by [`Var::segment_reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Rc<Vec<usize>>),
    ScatterAddRows(NodeId, Rc<Vec<usize>>),
    SegmentReduce(NodeId, Rc<Vec<Vec<usize>>>, Reduce),
    Conv2d(NodeId, NodeId, usize),
    MeanPool2(NodeId),
    Reshape(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LseRows(NodeId, Rc<Vec<usize>>),
    Pick(NodeId, Rc<Vec<usize>>),
    SumAll(NodeId),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, NodeId>,
}

/// Recording context for one forward/backward pass.
pub struct Tape<S> {
    inner: RefCell<Inner<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: NodeId,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                params: HashMap::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<'_, S> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a parameter. Repeated calls for the same id return
    /// the same node so every use accumulates into one gradient.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var<'_, S> {
        if let Some(&node) = self.inner.borrow().params.get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable());
        self.inner.borrow_mut().params.insert(id, v.id);
        v
    }

    /// Accumulates d(loss)/d(param) into every trainable parameter reached
    /// from `loss`. Frozen parameters are never written.
    pub fn backward(&self, loss: Var<'_, S>, store: &mut ParamStore<S>) -> Result<()> {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<S>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: NodeId, grad: Tensor<S>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            };
            let need = |target: NodeId| nodes[target].requires_grad;
            let val = |target: NodeId| &nodes[target].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => store.accumulate(*pid, &g),
                Op::MatMul(a, b) => {
                    if need(*a) {
                        send(*a, kernels::matmul_nt(&g, val(*b)));
                    }
                    if need(*b) {
                        send(*b, kernels::matmul_tn(val(*a), &g));
                    }
                }
                Op::AddRowBias(a, b) => {
                    if need(*b) {
                        let n = val(*b).len();
                        let mut gb = vec![S::zero(); n];
                        for row in g.data().chunks(n) {
                            for (acc, &x) in gb.iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        send(*b, Tensor::new(val(*b).shape().to_vec(), gb)?);
                    }
                    send(*a, g);
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        send(*a, g.clone());
                    }
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    if need(*b) {
                        send(*b, g.map(|x| -x));
                    }
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        send(*a, zip_map(&g, val(*b), |x, y| x * y));
                    }
                    if need(*b) {
                        send(*b, zip_map(&g, val(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|x| x * c));
                }
                Op::Sigmoid(a) => send(*a, zip_map(&g, &node.value, |x, y| x * y * (S::one() - y))),
                Op::Tanh(a) => send(*a, zip_map(&g, &node.value, |x, y| x * (S::one() - y * y))),
                Op::Relu(a) => send(
                    *a,
                    zip_map(&g, &node.value, |x, y| if y > S::zero() { x } else { S::zero() }),
                ),
                Op::ConcatCols(parts) => {
                    let rows = g.shape()[0];
                    let total = g.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).shape()[1];
                        if need(p) {
                            let mut out = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                out.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                            }
                            send(p, Tensor::new(vec![rows, w], out)?);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let src = val(*a);
                    let (rows, cols) = (src.shape()[0], src.shape()[1]);
                    let w = end - start;
                    let mut out = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        out[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    send(*a, Tensor::new(vec![rows, cols], out)?);
                }
                Op::GatherRows(a, idx) => {
                    let src = val(*a);
                    let cols = src.shape()[1];
                    let mut out = vec![S::zero(); src.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            out[i * cols + c] += g.data()[r * cols + c];
                        }
                    }
                    send(*a, Tensor::new(src.shape().to_vec(), out)?);
                }
                Op::ScatterAddRows(a, idx) => {
                    let cols = g.shape()[1];
                    let mut out = Vec::with_capacity(idx.len() * cols);
                    for &i in idx.iter() {
                        out.extend_from_slice(&g.data()[i * cols..(i + 1) * cols]);
                    }
                    send(*a, Tensor::new(vec![idx.len(), cols], out)?);
                }
                Op::SegmentReduce(a, segments, reduce) => {
                    let src = val(*a);
                    let cols = src.shape()[1];
                    let mut out = vec![S::zero(); src.len()];
                    for (s, rows) in segments.iter().enumerate() {
                        let w = match reduce {
                            Reduce::Mean => S::one() / S::of(rows.len() as f64),
                            Reduce::Sum => S::one(),
                        };
                        for &r in rows {
                            for c in 0..cols {
                                out[r * cols + c] += g.data()[s * cols + c] * w;
                            }
                        }
                    }
                    send(*a, Tensor::new(src.shape().to_vec(), out)?);
                }
                Op::Conv2d(x, k, stride) => {
                    let (gx, gk) = kernels::conv2d_backward(val(*x), val(*k), *stride, &g, need(*x), need(*k));
                    if let Some(gx) = gx {
                        send(*x, gx);
                    }
                    if let Some(gk) = gk {
                        send(*k, gk);
                    }
                }
                Op::MeanPool2(a) => send(*a, kernels::mean_pool2_backward(val(*a).shape(), &g)),
                Op::Reshape(a) => send(*a, g.reshape(val(*a).shape())?),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.shape()[1];
                    let mut out = Vec::with_capacity(y.len());
                    for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                        let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        out.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
                    }
                    send(*a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.shape()[1];
                    let mut out = Vec::with_capacity(y.len());
                    for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                        let total: S = gr.iter().copied().sum();
                        out.extend(gr.iter().zip(yr).map(|(&a, &b)| a - b.exp() * total));
                    }
                    send(*a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::LseRows(a, labels) => {
                    let probs = kernels::softmax_rows(val(*a))?;
                    let cols = probs.shape()[1];
                    let mut out = probs.into_data();
                    for (r, &k) in labels.iter().enumerate() {
                        let gr = g.data()[r];
                        out[r * cols + k] -= S::one();
                        for x in &mut out[r * cols..(r + 1) * cols] {
                            *x *= gr;
                        }
                    }
                    send(*a, Tensor::new(val(*a).shape().to_vec(), out)?);
                }
                Op::Pick(a, idx) => {
                    let src = val(*a);
                    let cols = src.shape()[1];
                    let mut out = vec![S::zero(); src.len()];
                    for (r, &k) in idx.iter().enumerate() {
                        out[r * cols + k] = g.data()[r];
                    }
                    send(*a, Tensor::new(src.shape().to_vec(), out)?);
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    send(*a, Tensor::full(val(*a).shape(), gv));
                }
            }
        }
        Ok(())
    }
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> Ref<'t, Tensor<S>> {
        Ref::map(self.tape.inner.borrow(), |inner| &inner.nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    fn unary(&self, op: Op<S>, f: impl FnOnce(&Tensor<S>) -> Result<Tensor<S>>) -> Result<Var<'t, S>> {
        let out = f(&self.value())?;
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    fn binary(
        &self,
        other: &Var<'t, S>,
        op: Op<S>,
        f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> Result<Tensor<S>>,
    ) -> Result<Var<'t, S>> {
        let out = f(&self.value(), &other.value())?;
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, op, rg))
    }

    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::MatMul(self.id, other.id), kernels::matmul)
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_row_bias(&self, bias: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(bias, Op::AddRowBias(self.id, bias.id), |a, b| {
            check_rank("add_row_bias", a, 2)?;
            if b.len() != a.shape()[1] {
                return Err(TensorError::Shape {
                    op: "add_row_bias",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let n = b.len();
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(n) {
                for (x, &y) in row.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Tensor::new(a.shape().to_vec(), out)
        })
    }

    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            check_same_shape("add", a, b)?;
            Ok(zip_map(a, b, |x, y| x + y))
        })
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            check_same_shape("sub", a, b)?;
            Ok(zip_map(a, b, |x, y| x - y))
        })
    }

    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            check_same_shape("mul", a, b)?;
            Ok(zip_map(a, b, |x, y| x * y))
        })
    }

    pub fn scale(&self, c: S) -> Var<'t, S> {
        let out = self.value().map(|x| x * c);
        self.tape.push(out, Op::Scale(self.id, c), self.requires_grad())
    }

    pub fn sigmoid(&self) -> Var<'t, S> {
        let out = kernels::sigmoid(&self.value());
        self.tape.push(out, Op::Sigmoid(self.id), self.requires_grad())
    }

    pub fn tanh(&self) -> Var<'t, S> {
        let out = kernels::tanh(&self.value());
        self.tape.push(out, Op::Tanh(self.id), self.requires_grad())
    }

    pub fn relu(&self) -> Var<'t, S> {
        let out = kernels::relu(&self.value());
        self.tape.push(out, Op::Relu(self.id), self.requires_grad())
    }

    /// Column-wise concatenation of matrices sharing a row count.
    pub fn concat_cols(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let tape = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_cols of nothing".into()))?
            .tape;
        let out = {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            for v in &values {
                check_rank("concat_cols", v, 2)?;
            }
            let rows = values[0].shape()[0];
            if let Some(bad) = values.iter().find(|v| v.shape()[0] != rows) {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: values[0].shape().to_vec(),
                    right: bad.shape().to_vec(),
                });
            }
            let total: usize = values.iter().map(|v| v.shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &values {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let rg = tape.needs(&ids);
        Ok(tape.push(out, Op::ConcatCols(ids), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t, S>> {
        self.unary(Op::SliceCols(self.id, start, end), |a| {
            check_rank("slice_cols", a, 2)?;
            let cols = a.shape()[1];
            if start >= end || end > cols {
                return Err(TensorError::Index {
                    op: "slice_cols",
                    index: end,
                    len: cols,
                });
            }
            let mut out = Vec::with_capacity(a.shape()[0] * (end - start));
            for r in 0..a.shape()[0] {
                out.extend_from_slice(&a.row(r)[start..end]);
            }
            Tensor::new(vec![a.shape()[0], end - start], out)
        })
    }

    /// Rows of a matrix selected (with repetition) by `idx`.
    pub fn gather_rows(&self, idx: Vec<usize>) -> Result<Var<'t, S>> {
        let idx = Rc::new(idx);
        let i2 = Rc::clone(&idx);
        self.unary(Op::GatherRows(self.id, idx), move |a| {
            check_rank("gather_rows", a, 2)?;
            let rows = a.shape()[0];
            let mut out = Vec::with_capacity(i2.len() * a.shape()[1]);
            for &i in i2.iter() {
                if i >= rows {
                    return Err(TensorError::Index {
                        op: "gather_rows",
                        index: i,
                        len: rows,
                    });
                }
                out.extend_from_slice(a.row(i));
            }
            Tensor::new(vec![i2.len(), a.shape()[1]], out)
        })
    }

    /// Adds row `r` of `self` into row `idx[r]` of an `[n_out×cols]` zero matrix.
    pub fn scatter_add_rows(&self, idx: Vec<usize>, n_out: usize) -> Result<Var<'t, S>> {
        let idx = Rc::new(idx);
        let i2 = Rc::clone(&idx);
        self.unary(Op::ScatterAddRows(self.id, idx), move |a| {
            check_rank("scatter_add_rows", a, 2)?;
            if i2.len() != a.shape()[0] {
                return Err(TensorError::Shape {
                    op: "scatter_add_rows",
                    left: a.shape().to_vec(),
                    right: vec![i2.len()],
                });
            }
            let cols = a.shape()[1];
            let mut out = vec![S::zero(); n_out * cols];
            for (r, &i) in i2.iter().enumerate() {
                if i >= n_out {
                    return Err(TensorError::Index {
                        op: "scatter_add_rows",
                        index: i,
                        len: n_out,
                    });
                }
                for (o, &x) in out[i * cols..(i + 1) * cols].iter_mut().zip(a.row(r)) {
                    *o += x;
                }
            }
            Tensor::new(vec![n_out, cols], out)
        })
    }

    /// One output row per segment: the mean or sum of the listed rows.
    /// Each column is accumulated in ascending value order, so the result is
    /// bitwise independent of the order rows are listed in.
    pub fn segment_reduce(&self, segments: Vec<Vec<usize>>, reduce: Reduce) -> Result<Var<'t, S>> {
        let segments = Rc::new(segments);
        let s2 = Rc::clone(&segments);
        self.unary(Op::SegmentReduce(self.id, segments, reduce), move |a| {
            check_rank("segment_reduce", a, 2)?;
            let (rows, cols) = (a.shape()[0], a.shape()[1]);
            let mut out = Vec::with_capacity(s2.len() * cols);
            let mut column = Vec::new();
            for seg in s2.iter() {
                if seg.is_empty() {
                    return Err(TensorError::Invalid("segment_reduce: empty segment".into()));
                }
                if let Some(&bad) = seg.iter().find(|&&r| r >= rows) {
                    return Err(TensorError::Index {
                        op: "segment_reduce",
                        index: bad,
                        len: rows,
                    });
                }
                for c in 0..cols {
                    column.clear();
                    column.extend(seg.iter().map(|&r| a.data()[r * cols + c]));
                    column.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
                    let mut acc = S::zero();
                    for &x in &column {
                        acc += x;
                    }
                    if reduce == Reduce::Mean {
                        acc = acc / S::of(seg.len() as f64);
                    }
                    out.push(acc);
                }
            }
            Tensor::new(vec![s2.len(), cols], out)
        })
    }

    pub fn conv2d(&self, kernels: &Var<'t, S>, stride: usize) -> Result<Var<'t, S>> {
        self.binary(kernels, Op::Conv2d(self.id, kernels.id, stride), |x, k| {
            kernels::conv2d(x, k, stride)
        })
    }

    pub fn mean_pool2(&self) -> Result<Var<'t, S>> {
        self.unary(Op::MeanPool2(self.id), kernels::mean_pool2)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        self.unary(Op::Reshape(self.id), |a| a.reshape(shape))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t, S>> {
        self.unary(Op::SoftmaxRows(self.id), kernels::softmax_rows)
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'t, S>> {
        self.unary(Op::LogSoftmaxRows(self.id), kernels::log_softmax_rows)
    }

    /// Per-row LSE loss of `[R×M]` logits; yields a length-`R` vector.
    pub fn lse_rows(&self, labels: Vec<usize>) -> Result<Var<'t, S>> {
        let labels = Rc::new(labels);
        let l2 = Rc::clone(&labels);
        self.unary(Op::LseRows(self.id, labels), move |a| kernels::lse_rows(a, &l2))
    }

    /// Entry `idx[r]` of each row `r`; yields a length-`R` vector.
    pub fn pick(&self, idx: Vec<usize>) -> Result<Var<'t, S>> {
        let idx = Rc::new(idx);
        let i2 = Rc::clone(&idx);
        self.unary(Op::Pick(self.id, idx), move |a| {
            check_rank("pick", a, 2)?;
            let (rows, cols) = (a.shape()[0], a.shape()[1]);
            if i2.len() != rows {
                return Err(TensorError::Shape {
                    op: "pick",
                    left: a.shape().to_vec(),
                    right: vec![i2.len()],
                });
            }
            let mut out = Vec::with_capacity(rows);
            for (r, &k) in i2.iter().enumerate() {
                if k >= cols {
                    return Err(TensorError::Index {
                        op: "pick",
                        index: k,
                        len: cols,
                    });
                }
                out.push(a.data()[r * cols + k]);
            }
            Tensor::new(vec![rows], out)
        })
    }

    pub fn sum(&self) -> Var<'t, S> {
        let out = Tensor::scalar(self.value().data().iter().copied().sum());
        self.tape.push(out, Op::SumAll(self.id), self.requires_grad())
    }

    pub fn mean(&self) -> Var<'t, S> {
        let n = self.value().len();
        self.sum().scale(S::one() / S::of(n as f64))
    }

    pub fn dot(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        Ok(self.mul(other)?.sum())
    }
}

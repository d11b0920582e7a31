//! Reverse-mode differentiation over a linear operation record.
//!
//! Nodes are appended in evaluation order, so the record is topologically
//! sorted by construction and the backward pass is a single reverse sweep.
//! Parameter values are read from the borrowed [`ParamStore`] rather than
//! copied onto the tape.

use std::sync::Arc;

use super::params::{Gradients, ParamId, ParamStore};
use super::rng::Rng;
use super::tensor::{self, axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Max(Vec<Var>),
    Dot(Var, Var),
    Sum(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Mask(Var, Arc<Vec<f64>>),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Gradients of a scalar with respect to every recorded node.
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl NodeGrads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite() || matches!(op, Op::Constant));
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.constant(Tensor::zeros(&[len]))
    }

    /// Leaf for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// One row of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let table = self.store.value(id);
        let (rows, _) = table.dims2("row")?;
        if row >= rows {
            return Err(Error::Contract(format!(
                "row {row} out of range for {:?} with {rows} rows",
                self.store.name(id)
            )));
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::Row { param: id, row }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = self.value(w).matvec(self.value(x))?;
        Ok(self.push(out, Op::MatVec(w, x)))
    }

    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = Tensor::vecmat(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::VecMat(x, w)))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, tensor::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Concatenation along the leading axis (`⊕` for vectors).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Domain("stack of zero rows".into()))?;
        let width = match self.shape(first) {
            [d] => *d,
            s => return Err(Error::dim("stack", s, &[0])),
        };
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.shape() != [width] {
                return Err(Error::dim("stack", &[width], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows.len(), width, data)?;
        Ok(self.push(out, Op::Concat(rows.to_vec())))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || len == 0 || start + len > t.len() {
            return Err(Error::dim("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { input: a, start }))
    }

    /// Elementwise maximum over same-shaped operands.
    pub fn max(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Domain("max of zero operands".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != out.shape() {
                return Err(Error::dim("max", out.shape(), t.shape()));
            }
            for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                if x > *o {
                    *o = x;
                }
            }
        }
        Ok(self.push(out, Op::Max(parts.to_vec())))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("dot", ta.shape(), tb.shape()));
        }
        let out = Tensor::scalar(dot(ta.data(), tb.data()));
        Ok(self.push(out, Op::Dot(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Sum of several scalars (or same-shaped tensors).
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter();
        let mut acc = *iter
            .next()
            .ok_or_else(|| Error::Domain("sum of zero terms".into()))?;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::dim("log_softmax", t.shape(), &[0]));
        }
        let out = Tensor::vector(tensor::log_softmax(t.data())?);
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// Selects one element as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(Error::Contract(format!(
                "index {index} out of range for length {}",
                t.len()
            )));
        }
        let out = Tensor::scalar(t.data()[index]);
        Ok(self.push(out, Op::Pick(a, index)))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - ratio)`.
    pub fn dropout(&mut self, a: Var, ratio: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Domain(format!("dropout ratio {ratio} outside [0, 1)")));
        }
        if !training || ratio == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - ratio);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.next_f64() < ratio { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mask(a, Arc::new(mask))))
    }

    /// Accumulates `∂loss/∂θ` into `grads` for every parameter reached from
    /// `loss`, and returns the gradients of all intermediate nodes.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<NodeGrads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if grads.len() != self.store.len() {
            return Err(Error::Accounting(format!(
                "gradient buffer has {} slots for {} parameters",
                grads.len(),
                self.store.len()
            )));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = grads.slot(*id, self.store.value(*id).shape());
                    axpy(1.0, &g, slot.data_mut());
                }
                Op::Row { param, row } => {
                    let slot = grads.slot(*param, self.store.value(*param).shape());
                    axpy(1.0, &g, slot.row_mut(*row));
                }
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let ga = accum(&mut node_grads, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] += dot(&g[i * n..(i + 1) * n], tb.row(p));
                        }
                    }
                    let gb = accum(&mut node_grads, *b, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            axpy(ta.data()[i * k + p], &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
                Op::MatVec(w, x) => {
                    let tw = self.value(*w);
                    let tx = self.value(*x);
                    let k = tx.len();
                    let gw = accum(&mut node_grads, *w, tw.len());
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(gi, tx.data(), &mut gw[i * k..(i + 1) * k]);
                        }
                    }
                    let gx = accum(&mut node_grads, *x, k);
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(gi, tw.row(i), gx);
                        }
                    }
                }
                Op::VecMat(x, w) => {
                    let tw = self.value(*w);
                    let tx = self.value(*x);
                    let k = g.len();
                    let gx = accum(&mut node_grads, *x, tx.len());
                    for (i, gxi) in gx.iter_mut().enumerate() {
                        *gxi += dot(tw.row(i), &g);
                    }
                    let gw = accum(&mut node_grads, *w, tw.len());
                    for (i, &xi) in tx.data().iter().enumerate() {
                        axpy(xi, &g, &mut gw[i * k..(i + 1) * k]);
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, accum(&mut node_grads, *a, g.len()));
                    axpy(1.0, &g, accum(&mut node_grads, *b, g.len()));
                }
                Op::Sub(a, b) => {
                    axpy(1.0, &g, accum(&mut node_grads, *a, g.len()));
                    axpy(-1.0, &g, accum(&mut node_grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let ta = self.value(*a).data();
                    let tb = self.value(*b).data();
                    let ga = accum(&mut node_grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * tb[k];
                    }
                    let gb = accum(&mut node_grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * ta[k];
                    }
                }
                Op::Scale(a, c) => axpy(*c, &g, accum(&mut node_grads, *a, g.len())),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("owned").data();
                    let ga = accum(&mut node_grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("owned").data();
                    let ga = accum(&mut node_grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        axpy(1.0, &g[offset..offset + len], accum(&mut node_grads, p, len));
                        offset += len;
                    }
                }
                Op::Slice { input, start } => {
                    let len = self.value(*input).len();
                    let gi = accum(&mut node_grads, *input, len);
                    axpy(1.0, &g, &mut gi[*start..*start + g.len()]);
                }
                Op::Max(parts) => {
                    let y = node.value.as_ref().expect("owned").data();
                    let mut routed = vec![false; g.len()];
                    for &p in parts {
                        let x = self.value(p).data();
                        let gp = accum(&mut node_grads, p, g.len());
                        for k in 0..g.len() {
                            if !routed[k] && x[k] == y[k] {
                                gp[k] += g[k];
                                routed[k] = true;
                            }
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let tb = self.value(*b).data();
                    axpy(s, tb, accum(&mut node_grads, *a, tb.len()));
                    let ta = self.value(*a).data();
                    axpy(s, ta, accum(&mut node_grads, *b, ta.len()));
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    accum(&mut node_grads, *a, len).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().expect("owned").data();
                    let total: f64 = g.iter().sum();
                    let ga = accum(&mut node_grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] - y[k].exp() * total;
                    }
                }
                Op::Pick(a, index) => {
                    let len = self.value(*a).len();
                    accum(&mut node_grads, *a, len)[*index] += g[0];
                }
                Op::Mask(a, mask) => {
                    let ga = accum(&mut node_grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * mask[k];
                    }
                }
            }
            node_grads[idx] = Some(g);
        }
        Ok(NodeGrads { grads: node_grads })
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

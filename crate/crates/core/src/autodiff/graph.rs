use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds accepted by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Sqrt,
    Softplus,
    Abs,
    /// Sum of all elements.
    Sum,
    /// Mean of all elements.
    Mean,
    SumAxis(usize),
    MeanAxis(usize),
    Broadcast(Vec<usize>),
    Reshape(Vec<usize>),
    Concat(usize),
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Sqrt,
    Softplus,
    Abs,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Softplus => "softplus",
            Unary::Abs => "abs",
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Softplus => softplus(x),
            Unary::Abs => x.abs(),
        }
    }

    /// d(out)/d(in) from input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
            Unary::Softplus => sigmoid(x),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Unary(usize, Unary),
    Clamp(usize, f64, f64),
    SumAll(usize),
    MeanAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    Broadcast(usize, Vec<usize>),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
        end: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Tape of operations for one forward evaluation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction. [`Graph::backward`] may run once per graph; call
/// [`Graph::reset`] to reuse the allocation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
    consumed: bool,
    param_nodes: HashMap<ParamId, usize>,
    frozen: HashSet<ParamId>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// For each flat index of `out`, the flat index of `inp` it reads from.
fn broadcast_map(inp: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - inp.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..rank).rev() {
        let in_dim = if d >= pad { inp[d - pad] } else { 1 };
        in_strides[d] = if in_dim == 1 { 0 } else { stride };
        stride *= in_dim;
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += in_strides[d];
            if counter[d] < out[d] {
                break;
            }
            offset -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that reports non-finite values and log/div domain violations
    /// as errors instead of propagating them.
    pub fn checked() -> Self {
        Self {
            checked: true,
            ..Self::default()
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_nodes.clear();
        self.buffer_updates.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters in `ids` enter this graph as constants.
    pub fn freeze(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.extend(ids);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a running-statistics update to apply after the step.
    pub fn push_buffer_update(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient (reported via [`Gradients::var`]).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copy of `v` with no gradient connection.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Binds a stored parameter. Repeated calls return the same node, so
    /// shared uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&i) = self.param_nodes.get(&id) {
            return Var(i);
        }
        let trainable = !self.frozen.contains(&id) && store.is_trainable(id);
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable);
        self.nodes[v.0].param = Some(id);
        self.param_nodes.insert(id, v.0);
        v
    }

    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            OpKind::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(format!(
                "{kind:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let x = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(x, inputs[1]),
            OpKind::Add => self.add(x, inputs[1]),
            OpKind::Sub => self.sub(x, inputs[1]),
            OpKind::Mul => self.mul(x, inputs[1]),
            OpKind::Div => self.div(x, inputs[1]),
            OpKind::Relu => self.relu(x),
            OpKind::Sigmoid => self.sigmoid(x),
            OpKind::Tanh => self.tanh(x),
            OpKind::Exp => self.exp(x),
            OpKind::Log => self.log(x),
            OpKind::Square => self.square(x),
            OpKind::Sqrt => self.sqrt(x),
            OpKind::Softplus => self.softplus(x),
            OpKind::Abs => self.abs(x),
            OpKind::Sum => Ok(self.sum(x)),
            OpKind::Mean => Ok(self.mean(x)),
            OpKind::SumAxis(a) => self.sum_axis(x, *a),
            OpKind::MeanAxis(a) => self.mean_axis(x, *a),
            OpKind::Broadcast(s) => self.broadcast(x, s),
            OpKind::Reshape(s) => self.reshape(x, s),
            OpKind::Concat(a) => self.concat(inputs, *a),
            OpKind::Slice { axis, start, end } => self.slice(x, *axis, *start, *end),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push_checked("matmul", value, Op::MatMul(a.0, b.0), rg)
    }

    /// Brings `a` and `b` to a common shape, inserting broadcast nodes.
    fn align(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            return Ok((a, b));
        }
        let target = broadcast_shapes(&sa, &sb).ok_or(Error::Shape {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let a = if sa == target {
            a
        } else {
            self.broadcast(a, &target)?
        };
        let b = if sb == target {
            b
        } else {
            self.broadcast(b, &target)?
        };
        Ok((a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("aligned shapes")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("add", a, b)?;
        let value = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push_checked("add", value, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("sub", a, b)?;
        let value = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push_checked("sub", value, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("mul", a, b)?;
        let value = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push_checked("mul", value, Op::Mul(a.0, b.0), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("div", a, b)?;
        if self.checked && self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let value = self.zip(a, b, |x, y| x / y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push_checked("div", value, Op::Div(a.0, b.0), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x.0);
        self.push_checked("scale", value, Op::Scale(x.0, c), rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(x.0);
        self.push_checked("add_scalar", value, Op::Offset(x.0), rg)
    }

    fn unary(&mut self, x: Var, u: Unary) -> Result<Var> {
        if self.checked && u == Unary::Log {
            if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("log of non-positive value {bad}"),
                });
            }
        }
        let value = self.value(x).map(|v| u.eval(v));
        let rg = self.rg(x.0);
        self.push_checked(u.name(), value, Op::Unary(x.0, u), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }

    /// `log σ(x) = −softplus(−x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        let s = self.softplus(n)?;
        self.neg(s)
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x.0);
        self.push_checked("clamp", value, Op::Clamp(x.0, lo, hi), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::SumAll(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::MeanAll(x.0), rg)
    }

    fn reduce_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<(Tensor, usize)> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op,
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok((Tensor::new(out_shape, out)?, len))
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (value, _) = self.reduce_axis(x, axis, "sum_axis")?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::SumAxis(x.0, axis), rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (value, len) = self.reduce_axis(x, axis, "mean_axis")?;
        let value = value.map(|v| v / len as f64);
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::MeanAxis(x.0, axis), rg))
    }

    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let from = self.shape(x).to_vec();
        match broadcast_shapes(&from, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::Shape {
                    op: "broadcast",
                    lhs: from,
                    rhs: shape.to_vec(),
                })
            }
        }
        let map = broadcast_map(&from, shape);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Broadcast(x.0, from), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Reshape(x.0), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|p| self.rg(p.0));
        self.push_checked(
            "concat",
            value,
            Op::Concat(parts.iter().map(|p| p.0).collect(), axis),
            rg,
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: shape,
                rhs: vec![axis, start, end],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(x.0);
        Ok(self.push(
            value,
            Op::Slice {
                input: x.0,
                axis,
                start,
                end,
            },
            rg,
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Graph(
                "backward already ran on this graph; reset it first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |j: usize, contrib: Vec<f64>| {
                if !nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |j: usize| nodes[j].value.data();
            match &node.op {
                Op::Leaf => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    match node.param {
                        Some(id) => {
                            out.params.insert(id, t);
                        }
                        None => {
                            out.leaves.insert(i, t);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if nodes[*a].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, val(*b), true, &mut ga, 0.0);
                        send(*a, ga);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, val(*a), true, &g, false, &mut gb, 0.0);
                        send(*b, gb);
                    }
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|v| -v).collect());
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = g.iter().zip(y).map(|(g, y)| g / y).collect();
                    let gb = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(x, c) => send(*x, g.iter().map(|v| v * c).collect()),
                Op::Offset(x) => send(*x, g),
                Op::Unary(x, u) => {
                    let contrib = g
                        .iter()
                        .zip(val(*x).iter().zip(node.value.data()))
                        .map(|(g, (&xi, &yi))| g * u.deriv(xi, yi))
                        .collect();
                    send(*x, contrib);
                }
                Op::Clamp(x, lo, hi) => {
                    let contrib = g
                        .iter()
                        .zip(val(*x))
                        .map(|(g, &xi)| if xi > *lo && xi < *hi { *g } else { 0.0 })
                        .collect();
                    send(*x, contrib);
                }
                Op::SumAll(x) => send(*x, vec![g[0]; nodes[*x].value.numel()]),
                Op::MeanAll(x) => {
                    let n = nodes[*x].value.numel();
                    send(*x, vec![g[0] / n as f64; n]);
                }
                Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                    let shape = nodes[*x].value.shape();
                    let (outer, len, inner) = split_axis(shape, *axis);
                    let scale = if matches!(node.op, Op::MeanAxis(..)) {
                        1.0 / len as f64
                    } else {
                        1.0
                    };
                    let mut gx = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            for j in 0..inner {
                                gx[base + j] = g[o * inner + j] * scale;
                            }
                        }
                    }
                    send(*x, gx);
                }
                Op::Broadcast(x, from) => {
                    let map = broadcast_map(from, node.value.shape());
                    let mut gx = vec![0.0; numel(from)];
                    for (k, &src) in map.iter().enumerate() {
                        gx[src] += g[k];
                    }
                    send(*x, gx);
                }
                Op::Reshape(x) => send(*x, g),
                Op::Concat(parts, axis) => {
                    let shape = node.value.shape();
                    let (outer, _, inner) = split_axis(shape, *axis);
                    let mut offset = 0;
                    let mut pieces: Vec<(usize, Vec<f64>)> = Vec::with_capacity(parts.len());
                    for &p in parts {
                        let len = nodes[p].value.shape()[*axis];
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        let row = shape[*axis] * inner;
                        for o in 0..outer {
                            let s = o * row + offset * inner;
                            gp.extend_from_slice(&g[s..s + len * inner]);
                        }
                        offset += len;
                        pieces.push((p, gp));
                    }
                    for (p, gp) in pieces {
                        send(p, gp);
                    }
                }
                Op::Slice {
                    input,
                    axis,
                    start,
                    end,
                } => {
                    let shape = nodes[*input].value.shape();
                    let (outer, len, inner) = split_axis(shape, *axis);
                    let w = (end - start) * inner;
                    let mut gx = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        let dst = (o * len + start) * inner;
                        gx[dst..dst + w].copy_from_slice(&g[o * w..(o + 1) * w]);
                    }
                    send(*input, gx);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 0.880797).abs() < 1e-6);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn matmul_op() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[1., 1.]));
        let c = g.apply(&OpKind::MatMul, &[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(t(&[3], &[1., 2., 3.]));
        let sq = g.square(w).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.var(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(0.0));
        let s = g.sigmoid(w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.var(w).unwrap().item(), 0.25);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(1.0));
        let s = g.square(w).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Graph(_))));
        g.reset();
        let w = g.leaf(Tensor::scalar(1.0));
        let s = g.square(w).unwrap();
        assert!(g.backward(s).is_ok());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.leaf(t(&[2], &[1., 2.]));
        let s = g.square(w).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Graph(_))));
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[0.; 6]));
        let b = g.constant(t(&[2, 3], &[0.; 6]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = g.constant(t(&[3], &[0.; 3]));
        let d = g.constant(t(&[2], &[0.; 2]));
        assert!(matches!(g.add(c, d), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn checked_mode_rejects_log_of_nonpositive() {
        let mut g = Graph::checked();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::Domain { op: "log", .. })));
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        let y = g.log(x).unwrap();
        assert_eq!(g.value(y).data()[1], f64::NEG_INFINITY);
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let b = g.leaf(t(&[2], &[0.5, -0.5]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.var(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let a = g.slice(x, 1, 0, 1).unwrap();
        let b = g.slice(x, 1, 1, 3).unwrap();
        assert_eq!(g.value(b).data(), &[2., 3., 5., 6.]);
        let y = g.concat(&[b, a], 1).unwrap();
        assert_eq!(g.value(y).data(), &[2., 3., 1., 5., 6., 4.]);
        let w = g.constant(t(&[2, 3], &[1., 10., 100., 1000., 1e4, 1e5]));
        let p = g.mul(y, w).unwrap();
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert_eq!(
            grads.var(x).unwrap().data(),
            &[100., 1., 10., 1e5, 1000., 1e4]
        );
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let w1 = g.param(&store, id);
        let w2 = g.param(&store, id);
        assert_eq!(w1, w2);
        let p = g.mul(w1, w2).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.param(id, &store).item(), 6.0);
    }

    #[test]
    fn frozen_parameter_gets_no_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(3.0));
        let mut g = Graph::new();
        g.freeze([id]);
        let x = g.leaf(Tensor::scalar(2.0));
        let w = g.param(&store, id);
        let p = g.mul(w, x).unwrap();
        let grads = g.backward(p).unwrap();
        assert!(!grads.reached(id));
        assert_eq!(grads.param(id, &store).item(), 0.0);
        assert_eq!(grads.var(x).unwrap().item(), 3.0);
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[-30.0, 0.0, 30.0]));
        let c = g.clamp(x, -20.0, 20.0).unwrap();
        assert_eq!(g.value(c).data(), &[-20.0, 0.0, 20.0]);
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.var(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}

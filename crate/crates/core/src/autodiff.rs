//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! A [`Tape`] lives for one forward/backward pass. Every operation on a [`Var`] appends a node
//! holding its output value and the ids of its inputs; inputs always precede their consumers, so
//! [`Tape::backward`] can visit nodes exactly once in reverse append order.

use std::cell::RefCell;

use crate::error::{shape_err, Result};
use crate::nn::{self, Activation, ConvGeometry};
use crate::tensor::ops::{self, BinaryOp, UnaryOp};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Binary(BinaryOp, usize, usize),
    Broadcast(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    Matmul(usize, usize),
    Reshape(usize),
    Softmax(usize, usize),
    GlobalAvgPool(usize),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>, usize),
    Narrow { x: usize, axis: usize, start: usize },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeometry,
    },
    AvgPool2x(usize),
    Upsample2x(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::Broadcast(_, a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Unary(_, a)
            | Op::Reshape(a)
            | Op::Softmax(a, _)
            | Op::GlobalAvgPool(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::AvgPool2x(a)
            | Op::Upsample2x(a)
            | Op::Narrow { x: a, .. } => vec![*a],
            Op::Concat(v, _) => v.clone(),
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Per-kind tallies of what a tape recorded; used to cross-check cost accounting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TapeStats {
    pub conv_count: usize,
    pub macs: u64,
    pub flops: u64,
    pub activations: u64,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tape node.
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

    /// Record an input. Gradients flow only into leaves created with `tracked = true`.
    pub fn leaf(&self, value: Tensor, tracked: bool) -> Var<'_> {
        self.push(value, Op::Leaf, tracked)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let tracked = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].tracked)
        };
        self.push(value, op, tracked)
    }

    fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Cost tallies over every recorded operation (leaves and reshapes excluded).
    pub fn stats(&self) -> TapeStats {
        let nodes = self.nodes.borrow();
        let mut s = TapeStats::default();
        for node in nodes.iter() {
            let out = node.value.numel() as u64;
            let (macs, flops) = match &node.op {
                Op::Leaf | Op::Reshape(_) => continue,
                Op::Conv2d { w, b, .. } => {
                    s.conv_count += 1;
                    let ws = nodes[*w].value.shape();
                    let macs = out * (ws[1] * ws[2] * ws[3]) as u64;
                    (macs, macs + if b.is_some() { out } else { 0 })
                }
                Op::Matmul(a, _) => {
                    let k = *nodes[*a].value.shape().last().expect("rank") as u64;
                    (out * k, out * k)
                }
                Op::Softmax(..) => (0, 3 * out),
                Op::Upsample2x(_) => (0, 4 * out),
                Op::GlobalAvgPool(a) | Op::AvgPool2x(a) | Op::Sum(a) | Op::Mean(a) => {
                    (0, nodes[*a].value.numel() as u64)
                }
                Op::Concat(..) | Op::Narrow { .. } => (0, 0),
                Op::Binary(..) | Op::Broadcast(..) | Op::Unary(..) => (0, out),
            };
            s.macs += macs;
            s.flops += flops;
            s.activations += out;
        }
        s
    }

    /// Back-propagate from a single-element `loss`.
    ///
    /// Consumes the intermediate gradients as it goes; the returned map holds gradients for
    /// tracked leaves only.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return shape_err(
                "backward",
                format!("loss must be a single element, got {:?}", root.value.shape()),
            );
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !root.tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::full(
            root.value.shape(),
            1.0,
            root.value.dtype(),
        )?);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            let contributions: Vec<(usize, Tensor)> = match &node.op {
                Op::Leaf => unreachable!(),
                Op::Binary(op, a, b) => match op {
                    BinaryOp::Add => vec![(*a, g.clone()), (*b, g)],
                    BinaryOp::Sub => vec![(*a, g.clone()), (*b, ops::unary(&g, UnaryOp::Scale(-1.0))?)],
                    BinaryOp::Mul => vec![
                        (*a, ops::binary(&g, val(*b), BinaryOp::Mul)?),
                        (*b, ops::binary(&g, val(*a), BinaryOp::Mul)?),
                    ],
                },
                Op::Broadcast(op, a, b) => match op {
                    BinaryOp::Add => vec![(*a, g.clone()), (*b, ops::plane_sums(&g, None)?)],
                    BinaryOp::Sub => vec![
                        (*a, g.clone()),
                        (*b, ops::unary(&ops::plane_sums(&g, None)?, UnaryOp::Scale(-1.0))?),
                    ],
                    BinaryOp::Mul => vec![
                        (*a, ops::broadcast(&g, val(*b), BinaryOp::Mul)?),
                        (*b, ops::plane_sums(&g, Some(val(*a)))?),
                    ],
                },
                Op::Unary(op, a) => vec![(*a, ops::unary_backward(*op, val(*a), &node.value, &g)?)],
                Op::Matmul(a, b) => {
                    let (da, db) = ops::matmul_backward(val(*a), val(*b), &g)?;
                    vec![(*a, da), (*b, db)]
                }
                Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape())?)],
                Op::Softmax(a, axis) => vec![(*a, ops::softmax_backward(&node.value, &g, *axis)?)],
                Op::GlobalAvgPool(a) => {
                    vec![(*a, ops::global_avg_pool_backward(val(*a).shape(), &g)?)]
                }
                Op::Sum(a) => vec![(*a, ops::fill_like(val(*a).shape(), &g, 1.0)?)],
                Op::Mean(a) => {
                    let n = val(*a).numel() as f64;
                    vec![(*a, ops::fill_like(val(*a).shape(), &g, 1.0 / n)?)]
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    let mut out = Vec::with_capacity(parts.len());
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        out.push((p, ops::narrow(&g, *axis, start, len)?));
                        start += len;
                    }
                    out
                }
                Op::Narrow { x, axis, start } => {
                    vec![(*x, ops::narrow_backward(val(*x).shape(), &g, *axis, *start)?)]
                }
                Op::Conv2d { x, w, b, geom } => {
                    let need_x = nodes[*x].tracked;
                    let grads = nn::conv2d_backward(val(*x), val(*w), &g, *geom, need_x, b.is_some())?;
                    let mut out = vec![(*w, grads.weight)];
                    if let Some(gx) = grads.input {
                        out.push((*x, gx));
                    }
                    if let (Some(b), Some(gb)) = (b, grads.bias) {
                        out.push((*b, gb));
                    }
                    out
                }
                Op::AvgPool2x(a) => vec![(*a, nn::avg_pool2x_backward(&g)?)],
                Op::Upsample2x(a) => vec![(*a, nn::upsample2x_backward(&g)?)],
            };
            for (target, contrib) in contributions {
                if !nodes[target].tracked {
                    continue;
                }
                grads[target] = Some(match grads[target].take() {
                    Some(acc) => ops::binary(&acc, &contrib, BinaryOp::Add)?,
                    None => contrib,
                });
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the loss with respect to tracked leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    fn binary(self, other: Var<'t>, op: BinaryOp) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = ops::binary(&self.value(), &other.value(), op)?;
        Ok(self.tape.record(v, Op::Binary(op, self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryOp::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryOp::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryOp::Mul)
    }

    fn broadcast(self, other: Var<'t>, op: BinaryOp) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = ops::broadcast(&self.value(), &other.value(), op)?;
        Ok(self.tape.record(v, Op::Broadcast(op, self.id, other.id)))
    }

    /// `self[N,C,H,W] + other[N,C,1,1]`.
    pub fn broadcast_add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast(other, BinaryOp::Add)
    }

    /// `self[N,C,H,W] * other[N,C,1,1]`.
    pub fn broadcast_mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast(other, BinaryOp::Mul)
    }

    pub(crate) fn unary(self, op: UnaryOp) -> Result<Var<'t>> {
        let v = ops::unary(&self.value(), op)?;
        Ok(self.tape.record(v, Op::Unary(op, self.id)))
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.unary(UnaryOp::Scale(s))
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        self.unary(UnaryOp::AddScalar(s))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn activation(self, act: Activation) -> Result<Var<'t>> {
        self.unary(act.as_unary())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let v = ops::matmul(&self.value(), &other.value())?;
        Ok(self.tape.record(v, Op::Matmul(self.id, other.id)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.record(v, Op::Reshape(self.id)))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let v = ops::softmax(&self.value(), axis)?;
        Ok(self.tape.record(v, Op::Softmax(self.id, axis)))
    }

    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let v = ops::global_avg_pool(&self.value())?;
        Ok(self.tape.record(v, Op::GlobalAvgPool(self.id)))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let v = ops::sum_all(&self.value());
        Ok(self.tape.record(v, Op::Sum(self.id)))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let x = self.value();
        let v = ops::unary(&ops::sum_all(&x), UnaryOp::Scale(1.0 / x.numel() as f64))?;
        Ok(self.tape.record(v, Op::Mean(self.id)))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let Some(first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        parts.iter().for_each(|p| first.same_tape(p));
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let v = ops::concat(&refs, axis)?;
        Ok(first
            .tape
            .record(v, Op::Concat(parts.iter().map(|p| p.id).collect(), axis)))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = ops::narrow(&self.value(), axis, start, len)?;
        Ok(self.tape.record(
            v,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, geom: ConvGeometry) -> Result<Var<'t>> {
        self.same_tape(&weight);
        let bias_val = bias.map(|b| b.value());
        let v = nn::conv2d(&self.value(), &weight.value(), bias_val.as_ref(), geom)?;
        Ok(self.tape.record(
            v,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                geom,
            },
        ))
    }

    pub fn avg_pool2x(self) -> Result<Var<'t>> {
        let v = nn::avg_pool2x(&self.value())?;
        Ok(self.tape.record(v, Op::AvgPool2x(self.id)))
    }

    pub fn upsample2x(self) -> Result<Var<'t>> {
        let v = nn::upsample2x(&self.value())?;
        Ok(self.tape.record(v, Op::Upsample2x(self.id)))
    }
}

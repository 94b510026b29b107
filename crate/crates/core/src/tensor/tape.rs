//! Explicitly scoped reverse-mode tape.
//!
//! Every operation on a [`Var`] appends a node holding the primitive, its
//! input ids and its forward value. [`Tape::grad`] walks the nodes backwards
//! with plain arrays; [`Tape::grad_graph`] applies the same adjoint rules as
//! recorded primitives, so the returned gradients are themselves `Var`s that
//! can be differentiated again.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::array::{self, Shape, Tensor};
use crate::error::{Error, Result};
use crate::math;

pub type NodeId = usize;

/// The closed set of differentiable primitives.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `op(a) · op(b)`, each operand optionally transposed.
    MatMul {
        ta: bool,
        tb: bool,
    },
    Add,
    Sub,
    Mul,
    Div,
    /// Matrix plus a row vector broadcast over rows.
    AddRow,
    /// Column sums, `[n, m] -> [m]`.
    SumRows,
    /// `[m] -> [n, m]`.
    BroadcastRows(usize),
    /// `scale · x + shift`; covers scalar multiplication.
    Affine {
        scale: f64,
        shift: f64,
    },
    Sin,
    Cos,
    Sigmoid,
    Log,
    Square,
    Sum,
    Mean,
    /// Scalar broadcast to the given shape.
    Expand(Shape),
    /// Elementwise clamp; the derivative is 1 inside `[lo, hi]`, 0 outside.
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// Elementwise product with a fixed, non-differentiable mask.
    Mask(Tensor),
}

impl Primitive {
    pub fn arity(&self) -> usize {
        match self {
            Primitive::MatMul { .. }
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Div
            | Primitive::AddRow => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "elementwise-mul",
            Primitive::Div => "div",
            Primitive::AddRow => "broadcast-add",
            Primitive::SumRows => "sum-rows",
            Primitive::BroadcastRows(_) => "broadcast-rows",
            Primitive::Affine { .. } => "scalar-mul",
            Primitive::Sin => "sin",
            Primitive::Cos => "cos",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Log => "log",
            Primitive::Square => "square",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Expand(_) => "expand",
            Primitive::Clamp { .. } => "clamp",
            Primitive::Mask(_) => "mask",
        }
    }
}

/// Evaluates one primitive on plain tensors. The tape, replay checks and
/// tape-free inference all go through this function.
pub fn primitive_forward(p: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() != p.arity() {
        return Err(Error::contract(alloc::format!(
            "{} takes {} inputs, got {}",
            p.name(),
            p.arity(),
            inputs.len()
        )));
    }
    let x = inputs[0];
    Ok(match p {
        Primitive::MatMul { ta, tb } => array::matmul(x, inputs[1], *ta, *tb)?,
        Primitive::Add => {
            array::check_same("add", x, inputs[1])?;
            x.zip(inputs[1], |a, b| a + b)
        }
        Primitive::Sub => {
            array::check_same("sub", x, inputs[1])?;
            x.zip(inputs[1], |a, b| a - b)
        }
        Primitive::Mul => {
            array::check_same("elementwise-mul", x, inputs[1])?;
            x.zip(inputs[1], |a, b| a * b)
        }
        Primitive::Div => {
            array::check_same("div", x, inputs[1])?;
            x.zip(inputs[1], |a, b| a / b)
        }
        Primitive::AddRow => array::add_row(x, inputs[1])?,
        Primitive::SumRows => array::sum_rows(x)?,
        Primitive::BroadcastRows(n) => array::broadcast_rows(x, *n)?,
        Primitive::Affine { scale, shift } => {
            let (s, b) = (*scale, *shift);
            if b == 0.0 {
                x.map(|v| s * v)
            } else {
                x.map(|v| s * v + b)
            }
        }
        Primitive::Sin => Tensor::from_parts(x.shape(), math::sin_vec(x.data())),
        Primitive::Cos => Tensor::from_parts(x.shape(), math::cos_vec(x.data())),
        Primitive::Sigmoid => x.map(math::sigmoid),
        Primitive::Log => x.map(math::ln),
        Primitive::Square => x.map(|v| v * v),
        Primitive::Sum => Tensor::scalar(x.sum_all()),
        Primitive::Mean => {
            if x.numel() == 0 {
                return Err(Error::contract("mean of an empty tensor"));
            }
            Tensor::scalar(x.sum_all() / x.numel() as f64)
        }
        Primitive::Expand(shape) => {
            if x.numel() != 1 {
                return Err(Error::Dimension {
                    op: "expand",
                    lhs: x.shape(),
                    rhs: *shape,
                });
            }
            Tensor::full(*shape, x.item())
        }
        Primitive::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            x.map(|v| v.clamp(lo, hi))
        }
        Primitive::Mask(mask) => {
            array::check_same("mask", x, mask)?;
            x.zip(mask, |a, m| a * m)
        }
    })
}

#[derive(Clone)]
struct Node {
    op: Option<Primitive>,
    inputs: [NodeId; 2],
    value: Tensor,
    /// Differentiable leaf; informational only, gradients follow `wrt`.
    param: bool,
}

/// An append-only record of one computation. Nodes are stored in creation
/// order, which is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
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

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    pub fn is_param(&self, v: Var<'_>) -> bool {
        self.nodes.borrow()[v.id].param
    }

    /// A non-parameter leaf (inputs, labels, detached values).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: None,
            inputs: [0; 2],
            value,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn apply(&self, op: Primitive, inputs: &[NodeId]) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| &nodes[i].value).collect();
            primitive_forward(&op, &vals)?
        };
        let mut ids = [0; 2];
        ids[..inputs.len()].copy_from_slice(inputs);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Some(op),
            inputs: ids,
            value,
            param: false,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value_of(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`, as
    /// plain tensors. Leaves that `output` does not depend on get zeros.
    pub fn grad(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Tensor>> {
        self.backward(output, wrt, &RawBackend { tape: self })
    }

    /// Like [`Tape::grad`], but the adjoint computation is itself recorded so
    /// that the returned gradients can be differentiated again.
    pub fn grad_graph<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        self.backward(output, wrt, &GraphBackend { tape: self })
    }

    fn backward<B: Backend>(&self, output: Var<'_>, wrt: &[Var<'_>], b: &B) -> Result<Vec<B::G>> {
        let out_shape = output.shape();
        if !out_shape.is_scalar() && out_shape.numel() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar output, got shape {out_shape}"
            )));
        }
        for w in wrt {
            if !core::ptr::eq(w.tape, self) || !core::ptr::eq(output.tape, self) {
                return Err(Error::contract("variables belong to a different tape"));
            }
        }
        let out = output.id;
        let lo = match wrt.iter().map(|w| w.id).min() {
            Some(lo) if lo <= out => lo,
            _ => {
                return Ok(wrt.iter().map(|w| b.zeros(w.shape())).collect());
            }
        };
        // A node is relevant when some `wrt` variable reaches it.
        let span = out - lo + 1;
        let mut relevant = vec![false; span];
        for w in wrt {
            relevant[w.id - lo] = true;
        }
        {
            let nodes = self.nodes.borrow();
            for id in lo..=out {
                let node = &nodes[id];
                if relevant[id - lo] {
                    continue;
                }
                if let Some(op) = &node.op {
                    relevant[id - lo] = node.inputs[..op.arity()]
                        .iter()
                        .any(|&i| i >= lo && relevant[i - lo]);
                }
            }
        }
        let mut grads: Vec<Option<B::G>> = vec![None; span];
        if relevant[out - lo] {
            grads[out - lo] = Some(b.ones_like(out));
        }
        // `wrt` entries keep their gradient; everything else is consumed.
        let mut keep = vec![false; span];
        for w in wrt {
            keep[w.id - lo] = true;
        }
        for id in (lo..=out).rev() {
            let g = if keep[id - lo] {
                grads[id - lo].clone()
            } else {
                grads[id - lo].take()
            };
            let Some(g) = g else { continue };
            let (op, inputs) = {
                let nodes = self.nodes.borrow();
                match &nodes[id].op {
                    Some(op) => (op.clone(), nodes[id].inputs),
                    None => continue,
                }
            };
            let arity = op.arity();
            let mut need = [false; 2];
            for k in 0..arity {
                need[k] = inputs[k] >= lo && relevant[inputs[k] - lo];
            }
            if !need[0] && !need[1] {
                continue;
            }
            let contribs = vjp(b, &op, &inputs[..arity], id, &g, need);
            for (k, c) in contribs.into_iter().enumerate() {
                if let Some(c) = c {
                    let slot = &mut grads[inputs[k] - lo];
                    *slot = Some(match slot.take() {
                        Some(prev) => b.apply(Primitive::Add, &[&prev, &c]),
                        None => c,
                    });
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match &grads[w.id - lo] {
                Some(g) => g.clone(),
                None => b.zeros(w.shape()),
            })
            .collect())
    }

    /// Recomputes every non-leaf node from its inputs and returns the first
    /// node whose stored value differs bitwise, if any.
    pub fn verify_replay(&self) -> Option<NodeId> {
        let nodes = self.nodes.borrow();
        for (id, node) in nodes.iter().enumerate() {
            let Some(op) = &node.op else { continue };
            let vals: Vec<&Tensor> = node.inputs[..op.arity()]
                .iter()
                .map(|&i| &nodes[i].value)
                .collect();
            match primitive_forward(op, &vals) {
                Ok(v) if v.bitwise_eq(&node.value) => {}
                _ => return Some(id),
            }
        }
        None
    }

    /// Checks that every node's inputs precede it.
    pub fn is_topological(&self) -> bool {
        let nodes = self.nodes.borrow();
        nodes.iter().enumerate().all(|(id, n)| match &n.op {
            Some(op) => n.inputs[..op.arity()].iter().all(|&i| i < id),
            None => true,
        })
    }
}

/// The algebra the adjoint rules are written against: plain tensors for
/// first-order backward, recorded variables for differentiable backward.
trait Backend {
    type G: Clone;
    fn node(&self, id: NodeId) -> Self::G;
    fn value(&self, id: NodeId) -> Tensor;
    fn apply(&self, p: Primitive, inputs: &[&Self::G]) -> Self::G;
    fn zeros(&self, shape: Shape) -> Self::G;
    fn ones_like(&self, id: NodeId) -> Self::G;
}

struct RawBackend<'t> {
    tape: &'t Tape,
}

impl Backend for RawBackend<'_> {
    type G = Tensor;

    fn node(&self, id: NodeId) -> Tensor {
        self.tape.value_of(id)
    }

    fn value(&self, id: NodeId) -> Tensor {
        self.tape.value_of(id)
    }

    fn apply(&self, p: Primitive, inputs: &[&Tensor]) -> Tensor {
        primitive_forward(&p, inputs).expect("adjoint shapes conform by construction")
    }

    fn zeros(&self, shape: Shape) -> Tensor {
        Tensor::zeros(shape)
    }

    fn ones_like(&self, id: NodeId) -> Tensor {
        Tensor::full(self.tape.value_of(id).shape(), 1.0)
    }
}

struct GraphBackend<'t> {
    tape: &'t Tape,
}

impl<'t> Backend for GraphBackend<'t> {
    type G = Var<'t>;

    fn node(&self, id: NodeId) -> Var<'t> {
        Var {
            tape: self.tape,
            id,
        }
    }

    fn value(&self, id: NodeId) -> Tensor {
        self.tape.value_of(id)
    }

    fn apply(&self, p: Primitive, inputs: &[&Var<'t>]) -> Var<'t> {
        let ids: Vec<NodeId> = inputs.iter().map(|v| v.id).collect();
        self.tape
            .apply(p, &ids)
            .expect("adjoint shapes conform by construction")
    }

    fn zeros(&self, shape: Shape) -> Var<'t> {
        self.tape.constant(Tensor::zeros(shape))
    }

    fn ones_like(&self, id: NodeId) -> Var<'t> {
        self.tape
            .constant(Tensor::full(self.tape.value_of(id).shape(), 1.0))
    }
}

/// Vector-Jacobian products of one node: the contribution of the upstream
/// gradient `g` to each input flagged in `need`.
fn vjp<B: Backend>(
    b: &B,
    op: &Primitive,
    inputs: &[NodeId],
    out: NodeId,
    g: &B::G,
    need: [bool; 2],
) -> [Option<B::G>; 2] {
    use Primitive as P;
    let neg = |x: &B::G| {
        b.apply(
            P::Affine {
                scale: -1.0,
                shift: 0.0,
            },
            &[x],
        )
    };
    let x = inputs[0];
    match op {
        P::MatMul { ta, tb } => {
            let (a, bb) = (b.node(inputs[0]), b.node(inputs[1]));
            let da = need[0].then(|| match (ta, tb) {
                (false, false) => b.apply(
                    P::MatMul {
                        ta: false,
                        tb: true,
                    },
                    &[g, &bb],
                ),
                (false, true) => b.apply(
                    P::MatMul {
                        ta: false,
                        tb: false,
                    },
                    &[g, &bb],
                ),
                (true, false) => b.apply(
                    P::MatMul {
                        ta: false,
                        tb: true,
                    },
                    &[&bb, g],
                ),
                (true, true) => b.apply(P::MatMul { ta: true, tb: true }, &[&bb, g]),
            });
            let db = need[1].then(|| match (ta, tb) {
                (false, false) => b.apply(
                    P::MatMul {
                        ta: true,
                        tb: false,
                    },
                    &[&a, g],
                ),
                (true, false) => b.apply(
                    P::MatMul {
                        ta: false,
                        tb: false,
                    },
                    &[&a, g],
                ),
                (false, true) => b.apply(
                    P::MatMul {
                        ta: true,
                        tb: false,
                    },
                    &[g, &a],
                ),
                (true, true) => b.apply(P::MatMul { ta: true, tb: true }, &[g, &a]),
            });
            [da, db]
        }
        P::Add => [need[0].then(|| g.clone()), need[1].then(|| g.clone())],
        P::Sub => [need[0].then(|| g.clone()), need[1].then(|| neg(g))],
        P::Mul => {
            let da = need[0].then(|| b.apply(P::Mul, &[g, &b.node(inputs[1])]));
            let db = need[1].then(|| b.apply(P::Mul, &[g, &b.node(inputs[0])]));
            [da, db]
        }
        P::Div => {
            let den = b.node(inputs[1]);
            let da = need[0].then(|| b.apply(P::Div, &[g, &den]));
            let db = need[1].then(|| {
                let gc = b.apply(P::Mul, &[g, &b.node(out)]);
                neg(&b.apply(P::Div, &[&gc, &den]))
            });
            [da, db]
        }
        P::AddRow => [
            need[0].then(|| g.clone()),
            need[1].then(|| b.apply(P::SumRows, &[g])),
        ],
        P::SumRows => {
            let rows = b.value(x).shape().rows();
            [Some(b.apply(P::BroadcastRows(rows), &[g])), None]
        }
        P::BroadcastRows(_) => [Some(b.apply(P::SumRows, &[g])), None],
        P::Affine { scale, .. } => [
            Some(b.apply(
                P::Affine {
                    scale: *scale,
                    shift: 0.0,
                },
                &[g],
            )),
            None,
        ],
        P::Sin => {
            let c = b.apply(P::Cos, &[&b.node(x)]);
            [Some(b.apply(P::Mul, &[g, &c])), None]
        }
        P::Cos => {
            let s = b.apply(P::Sin, &[&b.node(x)]);
            [Some(neg(&b.apply(P::Mul, &[g, &s]))), None]
        }
        P::Sigmoid => {
            let y = b.node(out);
            let one_minus = b.apply(
                P::Affine {
                    scale: -1.0,
                    shift: 1.0,
                },
                &[&y],
            );
            let dy = b.apply(P::Mul, &[&y, &one_minus]);
            [Some(b.apply(P::Mul, &[g, &dy])), None]
        }
        P::Log => [Some(b.apply(P::Div, &[g, &b.node(x)])), None],
        P::Square => {
            let two_x = b.apply(
                P::Affine {
                    scale: 2.0,
                    shift: 0.0,
                },
                &[&b.node(x)],
            );
            [Some(b.apply(P::Mul, &[g, &two_x])), None]
        }
        P::Sum => [Some(b.apply(P::Expand(b.value(x).shape()), &[g])), None],
        P::Mean => {
            let shape = b.value(x).shape();
            let scaled = b.apply(
                P::Affine {
                    scale: 1.0 / shape.numel() as f64,
                    shift: 0.0,
                },
                &[g],
            );
            [Some(b.apply(P::Expand(shape), &[&scaled])), None]
        }
        P::Expand(_) => [Some(b.apply(P::Sum, &[g])), None],
        P::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            let mask = b
                .value(x)
                .map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
            [Some(b.apply(P::Mask(mask), &[g])), None]
        }
        P::Mask(mask) => [Some(b.apply(P::Mask(mask.clone()), &[g])), None],
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// The same value as a constant leaf, cut off from the gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(self, p: Primitive) -> Var<'t> {
        self.tape
            .apply(p, &[self.id])
            .expect("unary primitives accept any shape")
    }

    fn binary(self, p: Primitive, other: Var<'t>) -> Result<Var<'t>> {
        if !core::ptr::eq(self.tape, other.tape) {
            return Err(Error::contract("operands belong to different tapes"));
        }
        self.tape.apply(p, &[self.id, other.id])
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            Primitive::MatMul {
                ta: false,
                tb: false,
            },
            rhs,
        )
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(Primitive::Add, rhs)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(Primitive::Sub, rhs)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(Primitive::Mul, rhs)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(Primitive::Div, rhs)
    }

    /// Adds the row vector `bias` to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(Primitive::AddRow, bias)
    }

    pub fn sum_rows(self) -> Result<Var<'t>> {
        self.tape.apply(Primitive::SumRows, &[self.id])
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }

    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(Primitive::Affine { scale, shift })
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Primitive::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Primitive::Cos)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Primitive::Sigmoid)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Primitive::Log)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Primitive::Square)
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Primitive::Sum)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Mean, &[self.id])
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Primitive::Clamp { lo, hi })
    }

    pub fn mask(self, mask: Tensor) -> Result<Var<'t>> {
        self.tape.apply(Primitive::Mask(mask), &[self.id])
    }
}

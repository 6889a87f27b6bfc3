//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Values are recorded in construction order, so every node's parents have
//! smaller ids and the tape is already topologically sorted. [`Tape::backward`]
//! walks it once in reverse.
//!
//! ```
//! use temporal_embed::autodiff::Tape;
//! use temporal_embed::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::scalar(0.5).unwrap());
//! let tau = tape.constant(Tensor::scalar(2.0).unwrap());
//! let wt = tape.matmul(w, tau).unwrap();
//! let y = tape.sin(wt);
//! let grads = tape.backward(y).unwrap();
//! assert!((grads.get(w).unwrap().item() - 2.0 * 1f64.cos()).abs() < 1e-15);
//! ```

mod gradcheck;
mod ops;

use std::fmt;
use std::str::FromStr;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};

/// Scalar forms of the activations recorded by the tape.
pub mod scalar {
    pub use super::ops::{bce_value as bce, mod1, sigmoid, triangle, PROB_CLAMP};
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise binary op is stretched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    None,
    /// `r×1` against `r×c`: one value per row.
    Col,
    /// `1×c` against `r×c`: one value per column.
    Row,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Hadamard(NodeId, NodeId, Broadcast),
    ConcatRows(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Mod1(NodeId),
    Triangle(NodeId),
    Scale(NodeId, f64),
    OneMinus(NodeId),
    SliceRows(NodeId, usize, usize),
    SumAll(NodeId),
    /// Summed binary cross-entropy of clamped probabilities against fixed targets.
    Bce(NodeId, Vec<f64>),
    /// Summed softmax cross-entropy over the columns of a logits matrix.
    SoftmaxXent(NodeId, Vec<usize>),
    /// Column `j` of the output is row `ids[j]` of the table.
    GatherRows(NodeId, Vec<usize>),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Hadamard(a, b, _) => {
                vec![*a, *b]
            }
            Op::ConcatRows(parts) => parts.clone(),
            Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Mod1(a)
            | Op::Triangle(a)
            | Op::Scale(a, _)
            | Op::OneMinus(a)
            | Op::SliceRows(a, _, _)
            | Op::SumAll(a)
            | Op::Bce(a, _)
            | Op::SoftmaxXent(a, _)
            | Op::GatherRows(a, _) => vec![*a],
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Hadamard(..) => "hadamard",
            Op::ConcatRows(..) => "concat-rows",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Mod1(..) => "mod1",
            Op::Triangle(..) => "triangle",
            Op::Scale(..) => "scale-by-constant",
            Op::OneMinus(..) => "one-minus",
            Op::SliceRows(..) => "slice",
            Op::SumAll(..) => "sum",
            Op::Bce(..) => "bce",
            Op::SoftmaxXent(..) => "softmax-xent",
            Op::GatherRows(..) => "gather-rows",
        }
    }
}

/// Operation selector for the generic [`Tape::apply`] entry point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Hadamard,
    ConcatRows,
    Sigmoid,
    Tanh,
    Relu,
    Sin,
    Cos,
    Mod1,
    Triangle,
    Scale(f64),
    OneMinus,
    Slice { start: usize, end: usize },
    Sum,
}

impl OpKind {
    /// Every tag accepted by [`OpKind::from_str`], with placeholder parameters.
    pub const ALL: [OpKind; 16] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Hadamard,
        OpKind::ConcatRows,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Mod1,
        OpKind::Triangle,
        OpKind::Scale(1.0),
        OpKind::OneMinus,
        OpKind::Slice { start: 0, end: 1 },
        OpKind::Sum,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::ConcatRows => "concat-rows",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Mod1 => "mod1",
            OpKind::Triangle => "triangle",
            OpKind::Scale(_) => "scale-by-constant",
            OpKind::OneMinus => "one-minus",
            OpKind::Slice { .. } => "slice",
            OpKind::Sum => "sum",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    /// Parses a tag such as `sigmoid`, `scale-by-constant:0.5` or `slice:1:3`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<&str> {
            args.get(i)
                .copied()
                .ok_or_else(|| Error::contract(format!("op tag `{s}` is missing argument {i}")))
        };
        let kind = match head {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "hadamard" => OpKind::Hadamard,
            "concat-rows" => OpKind::ConcatRows,
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "relu" => OpKind::Relu,
            "sin" => OpKind::Sin,
            "cos" => OpKind::Cos,
            "mod1" => OpKind::Mod1,
            "triangle" => OpKind::Triangle,
            "one-minus" => OpKind::OneMinus,
            "sum" => OpKind::Sum,
            "scale-by-constant" => OpKind::Scale(
                num(0)?
                    .parse()
                    .map_err(|_| Error::contract(format!("bad scale constant in `{s}`")))?,
            ),
            "slice" => {
                let parse = |v: &str| {
                    v.parse::<usize>()
                        .map_err(|_| Error::contract(format!("bad slice bound in `{s}`")))
                };
                OpKind::Slice {
                    start: parse(num(0)?)?,
                    end: parse(num(1)?)?,
                }
            }
            _ => return Err(Error::contract(format!("unknown op tag `{s}`"))),
        };
        Ok(kind)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`; `None` when no path
    /// connects them or the node was recorded as a constant.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when it is unreachable.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient (data, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// Parent ids of a node, in operand order.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::contract(format!(
                "node {} does not exist on a tape of length {}",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn record(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, value, requires_grad)
    }

    /// Generic entry point: applies `kind` to `inputs` and records the result.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        for &id in inputs {
            self.check(id)?;
        }
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Hadamard => Some(2),
            OpKind::ConcatRows => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(Error::contract(format!(
                    "{} expects {n} inputs, got {}",
                    kind.tag(),
                    inputs.len()
                )));
            }
        }
        match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Hadamard => self.hadamard(inputs[0], inputs[1]),
            OpKind::ConcatRows => self.concat_rows(inputs),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Relu => Ok(self.relu(inputs[0])),
            OpKind::Sin => Ok(self.sin(inputs[0])),
            OpKind::Cos => Ok(self.cos(inputs[0])),
            OpKind::Mod1 => Ok(self.mod1(inputs[0])),
            OpKind::Triangle => Ok(self.triangle(inputs[0])),
            OpKind::Scale(c) => Ok(self.scale(inputs[0], c)),
            OpKind::OneMinus => Ok(self.one_minus(inputs[0])),
            OpKind::Slice { start, end } => self.slice_rows(inputs[0], start, end),
            OpKind::Sum => Ok(self.sum(inputs[0])),
        }
    }

    /// Reverse sweep from a `1×1` root. Returns the gradient of the root with
    /// respect to every node that depends on a differentiable leaf.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.check(root)?;
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward requires a 1x1 root, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.backward_seeded(root, Tensor::ones(1, 1))
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_seeded(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        self.check(root)?;
        if seed.shape() != self.shape(root) {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.shape(root),
                rhs: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }
}

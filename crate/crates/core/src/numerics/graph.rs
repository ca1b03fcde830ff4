//! Gradient tape: every op appends a node, `backward` replays adjoints in
//! exact reverse order of execution.

use crate::error::{Error, Result};

use super::lstm::LstmTape;
use super::ops::{ConvGeom, OlaGeom};
use super::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<R> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    AddBias {
        x: Var,
        b: Var,
        axis: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Prelu {
        x: Var,
        alpha: Var,
        axis: usize,
    },
    Matmul {
        a: Var,
        b: Var,
        batch: usize,
        p: usize,
        q: usize,
        r: usize,
        shared_b: bool,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    GlobalNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<R>,
        rstd: f64,
    },
    CumNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
        counts: Vec<f64>,
    },
    Lstm(Box<LstmTape<R>>),
    Interp {
        x: Var,
        t_in: usize,
        t_out: usize,
    },
    OverlapAdd {
        x: Var,
        geom: OlaGeom,
    },
    Frame {
        x: Var,
        geom: OlaGeom,
    },
    Broadcast {
        x: Var,
        t: usize,
    },
    SumAll(Var),
    /// Loss whose gradient w.r.t. `x` was computed during the forward pass.
    ScalarLoss {
        x: Var,
        grad: Vec<R>,
    },
}

pub(crate) struct Node<R> {
    pub(crate) value: Tensor<R>,
    pub(crate) op: Op<R>,
    pub(crate) requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// A graph is single-owner. Values are immutable once recorded.
pub struct Graph<R: Real> {
    pub(crate) nodes: Vec<Node<R>>,
    grad_enabled: bool,
    backward_done: bool,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    /// A tape that records adjoint information.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            backward_done: false,
        }
    }

    /// A tape that only evaluates values (inference, pass 1 of two-pass training).
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
            backward_done: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        let rg = self.grad_enabled;
        self.push_node(value, Op::Leaf, rg)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn data(&self, v: Var) -> &[R] {
        self.nodes[v.0].value.data()
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push_node(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op result; the op record is kept only when an input needs gradients.
    pub(crate) fn push(&mut self, value: Tensor<R>, inputs: &[Var], op: impl FnOnce() -> Op<R>) -> Var {
        if self.any_grad(inputs) {
            let op = op();
            self.push_node(value, op, true)
        } else {
            self.push_node(value, Op::Leaf, false)
        }
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Visits ops in exact reverse execution order. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if !self.grad_enabled {
            return Err(Error::NoGradTape);
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![R::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !matches!(node.op, Op::Leaf) {
                for (var, g) in self.adjoint(idx, &gy)? {
                    if !self.nodes[var.0].requires_grad {
                        continue;
                    }
                    match &mut grads[var.0] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[idx] = Some(gy);
        }
        // Only leaves keep their accumulated gradient.
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<R> {
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[R]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

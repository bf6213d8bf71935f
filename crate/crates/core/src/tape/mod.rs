//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends a node holding its value and enough saved state
//! to run its backward rule. [`Tape::backward`] replays the nodes in reverse
//! insertion order, so gradient accumulation order is fixed and results are
//! bit-reproducible for identical inputs.

mod backward;
mod ops;

use alloc::vec::Vec;

use crate::cloud::ChamferVariant;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub use backward::Gradients;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale(Var, T),
    Relu(Var),
    Elementwise {
        x: Var,
        df: fn(T) -> T,
    },
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    MaxOverRows {
        x: Var,
        argmax: Vec<usize>,
    },
    TileRows {
        x: Var,
        times: usize,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    MultiHead {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: T,
        probs: Vec<T>,
    },
    Chamfer {
        p: Var,
        s: Var,
        variant: ChamferVariant,
        p_nn: Vec<usize>,
        s_nn: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Single-owner computation record. Not shared between threads while in use;
/// independent tapes may run concurrently.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
    fault: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            fault: false,
        }
    }

    /// Corrupts the matmul backward rule on this tape. Negative control for
    /// the gradient checks only.
    #[doc(hidden)]
    pub fn inject_fault(&mut self) {
        self.fault = true;
    }

    pub(crate) fn faulty(&self) -> bool {
        self.fault
    }

    /// Enables or disables the NaN/Inf check run on every recorded value.
    /// On by default in debug builds.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }
}

pub(crate) fn inputs<T>(op: &Op<T>) -> Vec<Var> {
    use Op::*;
    match op {
        Leaf => Vec::new(),
        MatMul { a, b, .. } => alloc::vec![*a, *b],
        Add(a, b) | Sub(a, b) | Mul(a, b) => alloc::vec![*a, *b],
        AddRow { x, bias } => alloc::vec![*x, *bias],
        LayerNorm { x, gain, bias, .. } => alloc::vec![*x, *gain, *bias],
        ConcatCols(xs) | ConcatRows(xs) => xs.clone(),
        MultiHead { q, k, v, .. } => alloc::vec![*q, *k, *v],
        Chamfer { p, s, .. } => alloc::vec![*p, *s],
        Transpose(x)
        | Scale(x, _)
        | Relu(x)
        | SoftmaxRows(x)
        | Reshape(x)
        | Sum(x)
        | Mean(x)
        | Elementwise { x, .. }
        | SliceCols { x, .. }
        | MaxOverRows { x, .. }
        | TileRows { x, .. }
        | RepeatRows { x, .. }
        | GatherRows { x, .. } => alloc::vec![*x],
    }
}

#[cfg(test)]
mod tests;

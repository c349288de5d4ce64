//! Reverse-mode differentiation for the handful of operators the
//! enhancement network needs.
//!
//! Activations are `batch x time x channels` tensors; a single example is
//! simply a batch of one. Frequency bins are channels. A [`Graph`] records
//! one forward pass and can be differentiated exactly once; parameters live
//! outside the graph in a [`ParamStore`] that the graph borrows read-only,
//! so many graphs can share one set of weights.
//!
//! ```
//! use avse::autograd::Graph;
//! use avse::autograd::ParamStore;
//! use ndarray::Array3;
//!
//! let params = ParamStore::<f64>::new();
//! let mut g = Graph::new(&params);
//! let x = g.input(Array3::from_elem((1, 2, 3), 2.0));
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum(y);
//! let grads = g.backward(loss).unwrap();
//! assert!(grads.wrt(x).unwrap().iter().all(|v| *v == 4.0));
//! ```

pub mod gradcheck;
mod ops;
mod params;
#[cfg(test)]
mod tests;

pub use params::{BnState, BnStore, ParamId, ParamStore, Parameter};

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array3, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type of the engine: `f64` for gradient checks,
/// `f32` for training.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    DepthwiseConv { x: Var, kernel: Var, stride: usize },
    DepthwiseConvUp { x: Var, kernel: Var },
    Project { x: Var, w: Var },
    AddBias { x: Var, bias: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Array3<T>, inv_std: Vec<T>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    AvgPool2(Var),
    Repeat2(Var),
    Concat { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Log1p(Var),
    PairNormalize { x: Var, norms: Vec<T> },
    PairDot(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Option<Array3<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward computation, recorded for a single backward pass.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Array3<T>>>,
    params: Vec<Option<Array3<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Array3<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array3<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_vars: HashMap::new(), consumed: false }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Array3<T>, op: Op<T>, requires_grad: bool) -> Var {
        let value = if value.is_standard_layout() { value } else { value.as_standard_layout().into_owned() };
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value from {op:?}");
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients are computed for.
    pub fn input(&mut self, value: Array3<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is treated as constant.
    pub fn constant(&mut self, value: Array3<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The node for a stored parameter; it requires gradients only while
    /// the parameter is trainable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: trainable });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Array3<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(value), _) => value,
            (None, Op::Param(id)) => &self.params.get(*id).value,
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Back-propagates from a scalar node. A graph can only be
    /// differentiated once; a second call is an [`Error::InvalidState`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::InvalidState("computation graph was already differentiated".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Array3<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Array3::from_elem(self.shape(loss), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<Option<Array3<T>>> = (0..self.params.len()).map(|_| None).collect();
        for (id, v) in &self.param_vars {
            params[id.0] = grads[v.0].clone();
        }
        Ok(Gradients { nodes: grads, params })
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Array3<T>>], v: Var, delta: Array3<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

use std::collections::HashMap;

use ndarray::Array3;
use rand::Rng;

use super::{Gradients, Scalar};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named learnable tensor. Values are stored as `1 x rows x cols`;
/// `rank` records whether the logical shape is `[cols]` or `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Array3<T>,
    pub grad: Array3<T>,
    pub trainable: bool,
    pub rank: usize,
}

impl<T: Scalar> Parameter<T> {
    /// Logical dimensions, as stored in checkpoints.
    pub fn dims(&self) -> Vec<usize> {
        let (_, r, c) = self.value.dim();
        if self.rank == 1 {
            vec![c]
        } else {
            vec![r, c]
        }
    }
}

/// Every learnable tensor of a model, addressed by id or unique name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    /// Registers a parameter with logical shape `dims` (rank 1 or 2).
    pub fn add(&mut self, name: impl Into<String>, dims: &[usize], value: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return invalid(format!("duplicate parameter name {name:?}"));
        }
        let shape = match dims {
            [c] => (1, 1, *c),
            [r, c] => (1, *r, *c),
            _ => return invalid(format!("parameter {name:?} must have rank 1 or 2, got {dims:?}")),
        };
        let value = Array3::from_shape_vec(shape, value)
            .map_err(|e| crate::Error::InvalidArgument(format!("parameter {name:?}: {e}")))?;
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter { name, grad: Array3::zeros(shape), value, trainable: true, rank: dims.len() });
        Ok(id)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, dims: &[usize], fill: T) -> Result<ParamId> {
        let n = dims.iter().product();
        self.add(name, dims, vec![fill; n])
    }

    /// Uniform values in `[-bound, bound]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, dims: &[usize], bound: f64, rng: &mut impl Rng) -> Result<ParamId> {
        let n = dims.iter().product();
        let values = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
        self.add(name, dims, values)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds the parameter gradients of one backward pass to the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.param(ParamId(i)) {
                p.grad += g;
            }
        }
    }

    /// Sets the trainable flag on every parameter whose name satisfies `pred`.
    pub fn set_trainable(&mut self, mut pred: impl FnMut(&str) -> bool, trainable: bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.trainable = trainable;
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }
}

/// Running per-channel statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Named batch-normalization states, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BnStore<T> {
    pub states: Vec<(String, BnState<T>)>,
}

impl<T: Scalar> BnStore<T> {
    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> usize {
        self.states.push((name.into(), BnState::new(channels)));
        self.states.len() - 1
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut BnState<T> {
        &mut self.states[idx].1
    }

    pub fn get(&self, idx: usize) -> &BnState<T> {
        &self.states[idx].1
    }
}

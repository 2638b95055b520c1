use std::collections::HashMap;

use super::{Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
}

/// Named parameter set of a model. Names are unique; insertion order is the
/// canonical order used for checkpoints and optimizer updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

/// Gradients produced by one backward pass, not yet applied to a store.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads<T: Real = f32> {
    pub(crate) entries: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            grad: Tensor::zeros(value.shape()),
            momentum: Tensor::zeros(value.shape()),
            name,
            value,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `scale * grads` into the gradient accumulators, in entry order.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>, scale: T) {
        for (id, g) in &grads.entries {
            let acc = self.params[id.0].grad.data_mut();
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += scale * v;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    momentum: p.momentum.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

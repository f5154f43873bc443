//! Persistent storage for trained parameters.
//!
//! Parameters outlive any single tape: a training step binds them onto a
//! fresh tape, runs backward, then routes gradients back here for the
//! optimizer. Iteration order is insertion order, so optimizer sweeps and
//! serialized layouts are stable across runs.

use super::tensor::Tensor;
use super::DiffError;
use std::collections::HashMap;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a named parameter. Names must be unique; they key the
    /// serialized checkpoint format.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId, DiffError> {
        if self.by_name.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, DiffError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &Tensor) {
        debug_assert!(self.params[id.0].grad.same_shape(g));
        for (o, v) in self.params[id.0].grad.data_mut().iter_mut().zip(g.data()) {
            *o += v;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total element count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }
}

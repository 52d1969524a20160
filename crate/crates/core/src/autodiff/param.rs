use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Owns every parameter of a network, keyed by unique name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Adds a parameter drawn uniformly from `±sqrt(1 / fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in &grads.by_param {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter {}", id.0)))?;
            p.grad.axpy(1.0, g)?;
        }
        Ok(())
    }

    /// Snapshot of all parameter values, in store order.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn load_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value.check_same_shape(v, &p.name)?;
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    /// `self += alpha * other`, inserting missing entries.
    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) -> Result<()> {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(mine) => mine.axpy(alpha, g)?,
                None => {
                    let mut t = g.clone();
                    t.scale(alpha);
                    self.by_param.insert(*id, t);
                }
            }
        }
        Ok(())
    }
}

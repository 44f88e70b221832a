//! Named parameter collections.

use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, uniform_sample, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
}

/// Ordered parameter set; the order of `add` calls is the declaration order
/// used by tapes, optimizers and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation drawn from a
    /// stream keyed by the parameter name, so unrelated layers never shift
    /// each other's random draws.
    pub fn add_fan_in(&mut self, rng: &Rng, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = uniform_sample(&mut rng.fork_named(name), shape, bound)?;
        Ok(self.add(name, t))
    }

    pub fn add_normal(&mut self, rng: &Rng, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t: Tensor<S> = gaussian_sample(&mut rng.fork_named(name), shape)?;
        Ok(self.add(name, t.scale(S::of(std))))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        Ok(self.add(name, Tensor::zeros(shape)?))
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        Ok(self.add(name, Tensor::ones(shape)?))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let cur = &mut self.params[id.0].value;
        if cur.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", cur.shape(), value.shape()));
        }
        *cur = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn tensors(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces every value (same count and shapes required).
    pub fn set_all(&mut self, values: Vec<Tensor<S>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape("ParamStore::set_all", &[self.params.len()], &[values.len()]));
        }
        for (i, v) in values.into_iter().enumerate() {
            self.set(ParamId(i), v)?;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast() })
                .collect(),
        }
    }
}

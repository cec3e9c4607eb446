use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    /// Registers a `[rows, cols]` matrix drawn from `N(0, std^2)`.
    pub fn normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.register(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Zero-valued gradient buffers shaped like every parameter.
    pub fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub(crate) tensors: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }
}

//! Named parameter storage and weight initialisation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors. Insertion order is the checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name `{name}`");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }

    /// Replaces every value with the same-named tensor from `other`.
    ///
    /// Names and shapes must match exactly.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(AutodiffError::Checkpoint("parameter names differ from the model's".into()));
        }
        for (i, (dst, src)) in self.values.iter_mut().zip(&other.values).enumerate() {
            if dst.shape() != src.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Conv weight of shape `[cout, cin, k, k]` drawn uniformly from
/// `±1/sqrt(fan_in)` (Kaiming-uniform with negative slope `sqrt(5)`).
pub fn conv_weight<T: Float>(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Tensor<T> {
    let fan_in = (cin * k * k) as f64;
    let bound = 1.0 / fan_in.sqrt();
    let data = (0..cout * cin * k * k).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
    Tensor::new(&[cout, cin, k, k], data).expect("shape matches data")
}

pub fn zero_bias<T: Float>(cout: usize) -> Tensor<T> {
    Tensor::zeros(&[cout])
}

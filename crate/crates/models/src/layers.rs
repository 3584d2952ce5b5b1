use flnet_autodiff::params::{conv_weight, zero_bias};
use flnet_autodiff::{Float, Graph, ParamId, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};

/// A same-padded, stride-1 convolution with bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn create(store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), conv_weight(rng, cout, cin, k));
        let bias = store.add(format!("{name}.bias"), zero_bias(cout));
        Self { weight, bias, cin, cout, k }
    }

    /// Looks the layer up by name, checking the stored shapes.
    pub fn find<T: Float>(store: &ParamStore<T>, name: &str, cin: Option<usize>) -> Result<Self> {
        let missing = |p: &str| ModelError::Checkpoint(format!("missing parameter {name}.{p}"));
        let weight = store.find(&format!("{name}.weight")).ok_or_else(|| missing("weight"))?;
        let bias = store.find(&format!("{name}.bias")).ok_or_else(|| missing("bias"))?;
        let ws = store.get(weight).shape();
        if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(ModelError::Checkpoint(format!("{name}.weight has shape {ws:?}")));
        }
        if store.get(bias).shape() != [ws[0]] {
            return Err(ModelError::Checkpoint(format!("{name}.bias has shape {:?}", store.get(bias).shape())));
        }
        if let Some(c) = cin {
            if ws[1] != c {
                return Err(ModelError::Checkpoint(format!("{name} expects {} input channels, model provides {c}", ws[1])));
            }
        }
        Ok(Self { weight, bias, cin: ws[1], cout: ws[0], k: ws[2] })
    }

    pub fn apply<T: Float>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        Ok(g.conv2d(x, w, Some(b), self.k / 2, 1)?)
    }

    pub fn num_params(&self) -> usize {
        self.cout * self.cin * self.k * self.k + self.cout
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::Ops;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Channel layout of a shared point-wise MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub channels: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Layer normalization after each linear layer (before the activation).
    #[serde(default)]
    pub normalize: Vec<bool>,
    /// Whether the last layer is followed by the activation.
    #[serde(default = "yes")]
    pub activate_output: bool,
}

fn yes() -> bool {
    true
}

impl MlpSpec {
    pub fn new(channels: Vec<usize>) -> Self {
        let n = channels.len().saturating_sub(1);
        Self { channels, activation: Activation::Relu, normalize: vec![false; n], activate_output: true }
    }

    /// Hidden layers activated, last layer linear.
    pub fn head(channels: Vec<usize>) -> Self {
        Self { activate_output: false, ..Self::new(channels) }
    }

    pub fn layers(&self) -> usize {
        self.channels.len().saturating_sub(1)
    }

    pub fn in_dim(&self) -> usize {
        self.channels[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Config("MLP needs at least two channel entries".into()));
        }
        if !self.normalize.is_empty() && self.normalize.len() != self.layers() {
            return Err(Error::Config("MLP normalize flags must match layer count".into()));
        }
        Ok(())
    }

    fn normalized(&self, layer: usize) -> bool {
        self.normalize.get(layer).copied().unwrap_or(false)
    }

    /// Registers freshly initialized weights under `prefix`.
    pub fn init(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) {
        for l in 0..self.layers() {
            init_linear(store, &format!("{prefix}.{l}"), self.channels[l], self.channels[l + 1], rng);
            if self.normalized(l) {
                init_layer_norm(store, &format!("{prefix}.{l}.norm"), self.channels[l + 1]);
            }
        }
    }

    pub fn forward<O: Ops>(&self, ops: &mut O, x: &O::V, prefix: &str) -> Result<O::V> {
        let width = ops.value(x).cols();
        if width != self.in_dim() {
            return Err(Error::dim(
                "mlp_forward",
                format!("input width {width}, expected {}", self.in_dim()),
            ));
        }
        let mut h = x.clone();
        for l in 0..self.layers() {
            h = linear(ops, &h, &format!("{prefix}.{l}"))?;
            if self.normalized(l) {
                h = layer_norm(ops, &h, &format!("{prefix}.{l}.norm"))?;
            }
            if l + 1 < self.layers() || self.activate_output {
                h = match self.activation {
                    Activation::Relu => ops.relu(&h),
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }
}

/// Uniform Glorot initialization with zero bias.
pub fn init_linear(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut impl Rng) {
    let bound = (6.0 / (input + output) as f64).sqrt();
    let w: Vec<f64> = (0..input * output).map(|_| rng.random_range(-bound..bound)).collect();
    store.insert(format!("{prefix}.weight"), Tensor::matrix(output, input, w).unwrap());
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[output]));
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}.gamma"), Tensor::filled(&[dim], 1.0));
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[dim]));
}

/// Applies `{prefix}.weight` / `{prefix}.bias`.
pub fn linear<O: Ops>(ops: &mut O, x: &O::V, prefix: &str) -> Result<O::V> {
    let w = ops.param(&format!("{prefix}.weight"))?;
    let b = ops.param(&format!("{prefix}.bias"))?;
    ops.linear(x, &w, Some(&b))
}

pub fn layer_norm<O: Ops>(ops: &mut O, x: &O::V, prefix: &str) -> Result<O::V> {
    let g = ops.param(&format!("{prefix}.gamma"))?;
    let b = ops.param(&format!("{prefix}.beta"))?;
    ops.layer_norm(x, &g, &b, LAYER_NORM_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Eager, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negative_with_identity_weights() {
        let spec = MlpSpec::new(vec![2, 2]);
        let mut store = ParamStore::new();
        store.insert("m.0.weight", Tensor::identity(2));
        store.insert("m.0.bias", Tensor::zeros(&[2]));
        let mut ops = Eager::new(&store);
        let x = ops.constant(Tensor::from_rows(&[[1.0, -1.0]]).unwrap());
        let y = spec.forward(&mut ops, &x, "m").unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn sa_channel_spec_shapes() {
        let spec = MlpSpec::new(vec![3, 64, 128, 256]);
        let mut store = ParamStore::new();
        spec.init(&mut store, "sa1", &mut ChaCha8Rng::seed_from_u64(0));
        let mut ops = Eager::new(&store);
        let x = ops.constant(Tensor::zeros(&[7, 3]));
        let y = spec.forward(&mut ops, &x, "sa1").unwrap();
        assert_eq!(y.shape(), &[7, 256]);
    }

    #[test]
    fn hand_set_hidden_layer() {
        // x=1 -> hidden [2*1+1, -1*1+0.5] = [3, -0.5] -> relu [3, 0] -> out 0.5*3 - 2*0 + 0.25 = 1.75
        let spec = MlpSpec::head(vec![1, 2, 1]);
        let mut store = ParamStore::new();
        store.insert("h.0.weight", Tensor::matrix(2, 1, vec![2.0, -1.0]).unwrap());
        store.insert("h.0.bias", Tensor::vector(vec![1.0, 0.5]));
        store.insert("h.1.weight", Tensor::matrix(1, 2, vec![0.5, -2.0]).unwrap());
        store.insert("h.1.bias", Tensor::vector(vec![0.25]));
        let mut ops = Eager::new(&store);
        let x = ops.constant(Tensor::scalar(1.0));
        let y = spec.forward(&mut ops, &x, "h").unwrap();
        assert!((y.scalar_value() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let spec = MlpSpec::new(vec![3, 4]);
        let mut store = ParamStore::new();
        spec.init(&mut store, "m", &mut ChaCha8Rng::seed_from_u64(1));
        let mut ops = Eager::new(&store);
        let x = ops.constant(Tensor::zeros(&[2, 5]));
        assert!(spec.forward(&mut ops, &x, "m").is_err());
        assert!(MlpSpec::new(vec![3]).validate().is_err());
    }
}

//! Dense-network substrate shared by actors and critics.
//!
//! Networks are plain multilayer perceptrons with rectified-linear hidden
//! layers. Parameters live in one flat [`ParamVector`] laid out per layer as
//! the row-major `[fan_out, fan_in]` weight matrix followed by the bias, which
//! is the unit that gets averaged, serialized and broadcast.

mod adam;
mod average;
mod mlp;
mod serialize;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use average::weighted_param_average;
pub use mlp::{backward_batch, forward_batch, forward_batch_taped, mlp_backward, mlp_forward, Tape};
pub use serialize::{deserialize_params, read_params, serialize_params, write_params, HEADER_MAGIC};

/// Activation applied to the final layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    /// `bound * tanh(z)`, mapping every output coordinate into `(-bound, bound)`.
    BoundedSquash { bound: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
}

/// Offsets of one dense layer inside a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self { input_dim, hidden_dims, output_dim, output_activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all network dims must be >= 1, got {:?}",
                self.layer_dims()
            )));
        }
        if let OutputActivation::BoundedSquash { bound } = self.output_activation {
            if !(bound.is_finite() && bound > 0.0) {
                return Err(Error::InvalidArgument(format!("squash bound must be positive, got {bound}")));
            }
        }
        Ok(())
    }

    /// `[input, hidden..., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let dims = self.layer_dims();
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let layout = LayerLayout {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = layout.end();
                layout
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Flattened parameters of one network.
///
/// Entries are always finite and the length always equals
/// `spec.param_count()`; both are checked on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    spec: Arc<NetworkSpec>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: Arc<NetworkSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters for dims {:?}, got {}",
                spec.param_count(),
                spec.layer_dims(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: Arc<NetworkSpec>) -> Self {
        let n = spec.param_count();
        Self { spec, values: vec![0.0; n] }
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases alike.
    pub fn init_uniform<R: Rng + ?Sized>(spec: Arc<NetworkSpec>, rng: &mut R) -> Self {
        let mut values = vec![0.0; spec.param_count()];
        for layer in spec.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for v in &mut values[layer.weight_offset..layer.end()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Self { spec, values }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<NetworkSpec> {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn conforms_to(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.spec, &other.spec) || self.spec.layer_dims() == other.spec.layer_dims()
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn polyak_update(&mut self, source: &ParamVector, tau: f64) -> Result<()> {
        if !self.conforms_to(source) {
            return Err(Error::Shape("polyak update between different network shapes".into()));
        }
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }

    /// Overwrites the values with those of `source` (same shape required).
    pub fn copy_from(&mut self, source: &ParamVector) -> Result<()> {
        if !self.conforms_to(source) {
            return Err(Error::Shape("copy between different network shapes".into()));
        }
        self.values.copy_from_slice(&source.values);
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn param_count_matches_layout() {
        let spec = NetworkSpec::new(3, vec![4, 5], 2, OutputActivation::Linear).unwrap();
        assert_eq!(spec.param_count(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        let layers = spec.layers();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[1].weight_offset, 16);
        assert_eq!(layers[2].end(), spec.param_count());
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(NetworkSpec::new(3, vec![], 2, OutputActivation::Linear).is_err());
        assert!(NetworkSpec::new(0, vec![4], 2, OutputActivation::Linear).is_err());
        assert!(NetworkSpec::new(3, vec![4, 0], 2, OutputActivation::Linear).is_err());
        assert!(NetworkSpec::new(3, vec![4], 2, OutputActivation::BoundedSquash { bound: 0.0 }).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = Arc::new(NetworkSpec::new(16, vec![9], 1, OutputActivation::Linear).unwrap());
        let p = ParamVector::init_uniform(spec.clone(), &mut rng_from_seed(3));
        let first = spec.layers()[0];
        assert!(p.values()[..first.end()].iter().all(|v| v.abs() <= 0.25));
        let second = spec.layers()[1];
        assert!(p.values()[second.weight_offset..].iter().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn construction_rejects_wrong_length_and_nan() {
        let spec = Arc::new(NetworkSpec::new(1, vec![1], 1, OutputActivation::Linear).unwrap());
        assert!(matches!(ParamVector::new(spec.clone(), vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            ParamVector::new(spec, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }
}

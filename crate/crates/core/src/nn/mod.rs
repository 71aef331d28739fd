//! Small fully-connected ReLU classifier over a flat parameter vector.
//!
//! All aggregation math in the crate operates on [`ParamVector`]s; the
//! network itself is only ever viewed through that flat layout:
//! layer 0 weights (row-major, `fan_out x fan_in`), layer 0 biases, layer 1
//! weights, and so on.

mod backprop;
mod ops;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use backprop::{backprop, backprop_weighted, forward, forward_logits, Gradient, Sample, Target};
pub use ops::{
    ema_update, loss_ce, loss_mse_consistency, sgd_step, sharpen, softmax, LossGrad, CE_FLOOR,
};

/// Architecture of the classifier. The activation is always ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

/// Offsets of one dense layer inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("hidden_dims must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);

        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let shape = LayerShape {
                    fan_in,
                    fan_out,
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += (fan_in + 1) * fan_out;
                shape
            })
            .collect()
    }

    /// Σ (fan_in + 1) · fan_out over all layers.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| (l.fan_in + 1) * l.fan_out)
            .sum()
    }
}

/// Flat model parameters tied to the spec that gives them shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    spec: Arc<ModelSpec>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: Arc<ModelSpec>, values: Vec<f64>) -> Result<Self> {
        let expected = spec.param_count();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector { spec, values })
    }

    pub fn zeros(spec: Arc<ModelSpec>) -> Self {
        let n = spec.param_count();
        ParamVector {
            spec,
            values: vec![0.0; n],
        }
    }

    /// Builds a vector from values produced by arithmetic on vectors of the
    /// same spec. Finiteness is checked.
    pub(crate) fn from_parts(spec: Arc<ModelSpec>, values: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(values.len(), spec.param_count());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector { spec, values })
    }

    pub fn spec(&self) -> &Arc<ModelSpec> {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_spec(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.spec, &other.spec) || self.spec == other.spec
    }

    pub(crate) fn check_same_spec(&self, other: &ParamVector) -> Result<()> {
        if self.same_spec(other) {
            Ok(())
        } else {
            Err(Error::SpecMismatch)
        }
    }

    /// Writes the checkpoint document.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = CheckpointRef {
            spec: &self.spec,
            values: &self.values,
        };
        let text = serde_json::to_string(&doc).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        doc.spec.validate()?;
        ParamVector::new(Arc::new(doc.spec), doc.values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&CheckpointRef {
            spec: &self.spec,
            values: &self.values,
        })
        .expect("checkpoint serialization is infallible")
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    spec: &'a ModelSpec,
    values: &'a [f64],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    spec: ModelSpec,
    values: Vec<f64>,
}

/// Class-probability vector produced by the softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    probs: Vec<f64>,
}

impl Prediction {
    /// Wraps a probability vector, checking it is finite, non-negative and
    /// normalized to within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("prediction"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonFinite("prediction"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Prediction { probs })
    }

    pub(crate) fn from_softmax(probs: Vec<f64>) -> Self {
        Prediction { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &Arc<ModelSpec>, seed: u64) -> ParamVector {
    let mut rng = seed::rng(seed);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weight_range()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    ParamVector {
        spec: Arc::clone(spec),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(input: usize, hidden: &[usize], classes: usize) -> Arc<ModelSpec> {
        Arc::new(ModelSpec::new(input, hidden.to_vec(), classes).unwrap())
    }

    #[test]
    fn param_count_follows_layer_shapes() {
        // (4+1)*8 + (8+1)*8 + (8+1)*3
        assert_eq!(spec(4, &[8, 8], 3).param_count(), 139);
        assert_eq!(spec(2, &[], 2).param_count(), 6);
    }

    #[test]
    fn layer_chain_is_consistent() {
        let layers = spec(5, &[7, 4], 3).layers();
        assert_eq!(layers.len(), 3);
        for w in layers.windows(2) {
            assert_eq!(w[0].fan_out, w[1].fan_in);
            assert_eq!(w[0].bias_range().end, w[1].weight_offset);
        }
        assert_eq!(layers[2].bias_range().end, spec(5, &[7, 4], 3).param_count());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModelSpec::new(0, vec![3], 2).is_err());
        assert!(ModelSpec::new(2, vec![0], 2).is_err());
        assert!(ModelSpec::new(2, vec![3], 1).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(2, &[3], 2);
        let a = init_params(&s, 7);
        let b = init_params(&s, 7);
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), init_params(&s, 8).values());
        for layer in s.layers() {
            assert!(a.values()[layer.bias_range()].iter().all(|&b| b == 0.0));
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            assert!(a.values()[layer.weight_range()]
                .iter()
                .all(|w| w.abs() < bound));
        }
    }

    #[test]
    fn param_vector_rejects_bad_values() {
        let s = spec(2, &[], 2);
        assert!(matches!(
            ParamVector::new(s.clone(), vec![0.0; 5]),
            Err(Error::DimensionMismatch { expected: 6, actual: 5 })
        ));
        let mut v = vec![0.0; 6];
        v[3] = f64::NAN;
        assert!(ParamVector::new(s, v).is_err());
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let s = spec(3, &[4], 2);
        let p = init_params(&s, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        p.save(&path).unwrap();
        let q = ParamVector::load(&path).unwrap();
        assert_eq!(p, q);

        let doc: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(doc["spec"]["input_dim"], 3);
        assert_eq!(doc["spec"]["hidden_dims"], serde_json::json!([4]));
        assert_eq!(doc["values"].as_array().unwrap().len(), s.param_count());
    }

    #[test]
    fn prediction_validates_normalization() {
        assert!(Prediction::new(vec![0.5, 0.5]).is_ok());
        assert!(Prediction::new(vec![0.5, 0.6]).is_err());
        assert!(Prediction::new(vec![]).is_err());
        assert_eq!(Prediction::new(vec![0.2, 0.8]).unwrap().argmax(), 1);
    }
}

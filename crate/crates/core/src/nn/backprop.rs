use super::ops::{mse_against, softmax, CE_FLOOR};
use super::{LayerShape, ParamVector, Prediction};
use crate::error::{Error, Result};

/// What a sample is trained towards.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// Cross-entropy against a class index.
    Class(usize),
    /// Consistency MSE against a fixed distribution (e.g. a sharpened
    /// teacher prediction). No gradient flows into the target.
    Soft(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub target: Target<'a>,
}

/// Batch loss and its gradient w.r.t. the flat parameters.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub loss: f64,
    pub grads: ParamVector,
}

struct Trace {
    /// `acts[0]` is the input; `acts[l]` the post-ReLU output of hidden layer l.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn dense(layer: &LayerShape, values: &[f64], input: &[f64]) -> Vec<f64> {
    let w = &values[layer.weight_range()];
    let b = &values[layer.bias_range()];
    (0..layer.fan_out)
        .map(|o| {
            let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b[o]
        })
        .collect()
}

fn trace(layers: &[LayerShape], values: &[f64], x: &[f64]) -> Trace {
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x.to_vec());
    let last = layers.len() - 1;
    for layer in &layers[..last] {
        let mut h = dense(layer, values, acts.last().unwrap());
        for v in &mut h {
            *v = v.max(0.0);
        }
        acts.push(h);
    }
    let logits = dense(&layers[last], values, acts.last().unwrap());
    Trace { acts, logits }
}

fn check_input(params: &ParamVector, x: &[f64]) -> Result<()> {
    let expected = params.spec().input_dim;
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: x.len(),
        });
    }
    Ok(())
}

/// Raw output-layer activations.
pub fn forward_logits(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    let layers = params.spec().layers();
    Ok(trace(&layers, params.values(), x).logits)
}

/// Softmax class probabilities for one input.
pub fn forward(params: &ParamVector, x: &[f64]) -> Result<Prediction> {
    Ok(Prediction::from_softmax(softmax(&forward_logits(params, x)?)))
}

/// Mean loss and mean gradient over a batch.
pub fn backprop(params: &ParamVector, batch: &[Sample<'_>]) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let w = 1.0 / batch.len() as f64;
    let weighted: Vec<(Sample<'_>, f64)> = batch.iter().map(|s| (*s, w)).collect();
    backprop_weighted(params, &weighted)
}

/// `Σ w_i · loss_i` and its gradient. Used where different sample groups
/// are normalized separately (mixed labeled/unlabeled batches).
pub fn backprop_weighted(params: &ParamVector, batch: &[(Sample<'_>, f64)]) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let spec = params.spec();
    let layers = spec.layers();
    let values = params.values();
    let mut grads = vec![0.0; values.len()];
    let mut loss = 0.0;

    for (sample, weight) in batch {
        check_input(params, sample.x)?;
        let tr = trace(&layers, values, sample.x);
        let probs = softmax(&tr.logits);
        let (l, mut delta) = match sample.target {
            Target::Class(label) => {
                if label >= spec.num_classes {
                    return Err(Error::LabelOutOfRange {
                        label,
                        num_classes: spec.num_classes,
                    });
                }
                let l = -probs[label].max(CE_FLOOR).ln();
                let mut d = probs;
                d[label] -= 1.0;
                (l, d)
            }
            Target::Soft(target) => {
                let lg = mse_against(&probs, target)?;
                (lg.loss, lg.grad_logits)
            }
        };
        loss += weight * l;
        for d in &mut delta {
            *d *= weight;
        }

        for (idx, layer) in layers.iter().enumerate().rev() {
            let input = &tr.acts[idx];
            let gw = &mut grads[layer.weight_range()];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            for (g, d) in grads[layer.bias_range()].iter_mut().zip(&delta) {
                *g += d;
            }
            if idx == 0 {
                break;
            }
            let w = &values[layer.weight_range()];
            let mut back = vec![0.0; layer.fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            // ReLU: pass gradient only where the unit was active
            for (b, a) in back.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }

    Ok(Gradient {
        loss,
        grads: ParamVector::from_parts(spec.clone(), grads)?,
    })
}

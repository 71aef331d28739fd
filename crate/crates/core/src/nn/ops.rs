use super::{ParamVector, Prediction};
use crate::error::{Error, Result};

/// Probability floor applied inside the cross-entropy log.
pub const CE_FLOOR: f64 = 1e-12;

/// Loss value together with its gradient w.r.t. the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Cross-entropy `-log(max(p[label], 1e-12))`; the logit gradient is
/// `probs - onehot(label)`.
pub fn loss_ce(pred: &Prediction, label: usize) -> Result<LossGrad> {
    let probs = pred.probs();
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: probs.len(),
        });
    }
    let loss = -probs[label].max(CE_FLOOR).ln();
    let mut grad_logits = probs.to_vec();
    grad_logits[label] -= 1.0;
    Ok(LossGrad { loss, grad_logits })
}

/// Squared L2 distance between the student prediction and a fixed target
/// distribution. The gradient is taken through the student softmax only.
pub fn loss_mse_consistency(p_stu: &Prediction, target: &Prediction) -> Result<LossGrad> {
    mse_against(p_stu.probs(), target.probs())
}

pub(super) fn mse_against(p: &[f64], target: &[f64]) -> Result<LossGrad> {
    if p.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: target.len(),
        });
    }
    // dL/dp_k = 2 (p_k - t_k); through softmax: dz_k = p_k (g_k - Σ_j p_j g_j)
    let g: Vec<f64> = p.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
    let loss = p.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum();
    let dot: f64 = p.iter().zip(&g).map(|(p, g)| p * g).sum();
    let grad_logits = p.iter().zip(&g).map(|(p, g)| p * (g - dot)).collect();
    Ok(LossGrad { loss, grad_logits })
}

/// Temperature sharpening `p_i^(1/τ) / Σ_j p_j^(1/τ)`.
pub fn sharpen(p: &Prediction, tau: f64) -> Result<Prediction> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sharpening temperature must be positive, got {tau}"
        )));
    }
    let probs = p.probs();
    let max = probs.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::InvalidArgument(
            "cannot sharpen an all-zero distribution".into(),
        ));
    }
    if tau == 1.0 {
        return Ok(p.clone());
    }
    // dividing by the max first keeps the largest term at 1 so nothing
    // underflows to an all-zero vector
    let inv = 1.0 / tau;
    let mut out: Vec<f64> = probs.iter().map(|&q| (q / max).powf(inv)).collect();
    let sum: f64 = out.iter().sum();
    for q in &mut out {
        *q /= sum;
    }
    Ok(Prediction::from_softmax(out))
}

/// `params - lr * grads`, elementwise.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, lr: f64) -> Result<ParamVector> {
    params.check_same_spec(grads)?;
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be non-negative, got {lr}"
        )));
    }
    if grads.values().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let values = params
        .values()
        .iter()
        .zip(grads.values())
        .map(|(p, g)| p - lr * g)
        .collect();
    ParamVector::from_parts(params.spec().clone(), values)
}

/// Teacher update `α·θ_stu + (1-α)·θ_tea`; α weights the student.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, alpha: f64) -> Result<ParamVector> {
    teacher.check_same_spec(student)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "EMA coefficient must lie in [0, 1], got {alpha}"
        )));
    }
    let keep = 1.0 - alpha;
    let values = teacher
        .values()
        .iter()
        .zip(student.values())
        .map(|(t, s)| alpha * s + keep * t)
        .collect();
    ParamVector::from_parts(teacher.spec().clone(), values)
}

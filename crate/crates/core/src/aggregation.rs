//! Server-side model combination.
//!
//! Every aggregator here returns a convex combination of its inputs and is
//! invariant to the order of the input list (up to floating-point summation
//! order).

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// A client model paired with the number of samples it was trained on.
#[derive(Clone, Debug)]
pub struct WeightedModel {
    pub params: ParamVector,
    pub data_size: usize,
}

impl WeightedModel {
    pub fn new(params: ParamVector, data_size: usize) -> Result<Self> {
        if data_size == 0 {
            return Err(Error::InvalidArgument("data_size must be at least 1".into()));
        }
        Ok(WeightedModel { params, data_size })
    }
}

fn check_models(models: &[WeightedModel]) -> Result<()> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    for m in &models[1..] {
        first.params.check_same_spec(&m.params)?;
    }
    if models.iter().any(|m| m.data_size == 0) {
        return Err(Error::InvalidArgument("data_size must be at least 1".into()));
    }
    Ok(())
}

/// `Σ c_i θ_i`. Callers guarantee matching specs and `coeffs.len() == models.len()`.
pub fn weighted_sum<'a, I>(models: I, coeffs: &[f64]) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut iter = models.into_iter().zip(coeffs);
    let (first, c0) = iter.next().ok_or(Error::Empty("model list"))?;
    let mut acc: Vec<f64> = first.values().iter().map(|v| c0 * v).collect();
    for (m, c) in iter {
        first.check_same_spec(m)?;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += c * v;
        }
    }
    ParamVector::from_parts(first.spec().clone(), acc)
}

/// `N_i / Σ N_j`.
pub fn size_weights(models: &[WeightedModel]) -> Vec<f64> {
    let total: usize = models.iter().map(|m| m.data_size).sum();
    models
        .iter()
        .map(|m| m.data_size as f64 / total as f64)
        .collect()
}

/// Sample-size weighted average (FedAvg; also the intra-subset average).
pub fn fedavg(models: &[WeightedModel]) -> Result<ParamVector> {
    check_models(models)?;
    weighted_sum(models.iter().map(|m| &m.params), &size_weights(models))
}

/// Coefficients of the weight-adjusted average: the labeled group jointly
/// gets `labeled_share`, the unlabeled group the rest, each split by `N_i`.
/// Returned in the order labeled then unlabeled.
pub fn weight_adjusted_coefficients(
    labeled: &[WeightedModel],
    unlabeled: &[WeightedModel],
    labeled_share: f64,
) -> Result<Vec<f64>> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled model group"));
    }
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled model group"));
    }
    if !(labeled_share > 0.0 && labeled_share < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "labeled_share must lie in (0, 1), got {labeled_share}"
        )));
    }
    let mut coeffs: Vec<f64> = size_weights(labeled)
        .into_iter()
        .map(|w| w * labeled_share)
        .collect();
    coeffs.extend(
        size_weights(unlabeled)
            .into_iter()
            .map(|w| w * (1.0 - labeled_share)),
    );
    Ok(coeffs)
}

pub fn weight_adjusted_avg(
    labeled: &[WeightedModel],
    unlabeled: &[WeightedModel],
    labeled_share: f64,
) -> Result<ParamVector> {
    let coeffs = weight_adjusted_coefficients(labeled, unlabeled, labeled_share)?;
    let all: Vec<WeightedModel> = labeled.iter().chain(unlabeled).cloned().collect();
    check_models(&all)?;
    weighted_sum(all.iter().map(|m| &m.params), &coeffs)
}

/// Euclidean distance over the whole flat vector, biases included.
pub fn model_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_same_spec(b)?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Normalized distance-reweighted coefficients
/// `w_i ∝ (N_i/N) · exp(-β · ‖θ_i - θ_avg‖ / N_i)`.
///
/// Computed in log space with the maximum subtracted, so large `β` does not
/// underflow every weight at once. When all exponents coincide (β = 0, or
/// identical models) the plain size weights are returned unchanged.
pub fn dma_weights(models: &[WeightedModel], beta: f64) -> Result<Vec<f64>> {
    check_models(models)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and non-negative, got {beta}"
        )));
    }
    let base = size_weights(models);
    let avg = weighted_sum(models.iter().map(|m| &m.params), &base)?;
    let exponents = models
        .iter()
        .map(|m| Ok(-beta * model_distance(&m.params, &avg)? / m.data_size as f64))
        .collect::<Result<Vec<f64>>>()?;
    if exponents.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("reweighting exponent"));
    }
    if exponents.iter().all(|&e| e == exponents[0]) {
        return Ok(base);
    }
    let logs: Vec<f64> = base.iter().zip(&exponents).map(|(b, e)| b.ln() + e).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = raw.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(Error::NonFinite("reweighting normalizer"));
    }
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Sub-consensus model: `Σ w̄_i θ_i` with [`dma_weights`].
pub fn dma_aggregate(models: &[WeightedModel], beta: f64) -> Result<ParamVector> {
    let w = dma_weights(models, beta)?;
    weighted_sum(models.iter().map(|m| &m.params), &w)
}

/// Equal-weight mean of sub-consensus models.
pub fn consensus_mean(subs: &[ParamVector]) -> Result<ParamVector> {
    if subs.is_empty() {
        return Err(Error::Empty("sub-consensus list"));
    }
    if subs.len() == 1 {
        return Ok(subs[0].clone());
    }
    let w = vec![1.0 / subs.len() as f64; subs.len()];
    weighted_sum(subs, &w)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::nn::ModelSpec;

    /// Spec whose flat vector has exactly `n` entries (1 input, 0 hidden, so
    /// 2·classes entries); we only use even lengths.
    fn spec_len(n: usize) -> Arc<ModelSpec> {
        assert!(n.is_multiple_of(2) && n >= 4);
        Arc::new(ModelSpec::new(1, vec![], n / 2).unwrap())
    }

    fn wm(spec: &Arc<ModelSpec>, v: &[f64], n: usize) -> WeightedModel {
        WeightedModel::new(ParamVector::new(spec.clone(), v.to_vec()).unwrap(), n).unwrap()
    }

    /// Pads a scalar model to the 4-entry test spec by repeating it.
    fn scalar(spec: &Arc<ModelSpec>, v: f64, n: usize) -> WeightedModel {
        wm(spec, &[v; 4], n)
    }

    /// Independent scalar evaluation of the reweighting formula.
    fn scalar_oracle(thetas: &[f64], sizes: &[f64], beta: f64, dims: f64) -> Vec<f64> {
        let total: f64 = sizes.iter().sum();
        let avg: f64 = thetas.iter().zip(sizes).map(|(t, n)| t * n / total).sum();
        let w: Vec<f64> = thetas
            .iter()
            .zip(sizes)
            .map(|(t, n)| n / total * (-beta * (t - avg).abs() * dims.sqrt() / n).exp())
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn fedavg_examples() {
        let s = spec_len(4);
        let a = wm(&s, &[1.0, 1.0, 1.0, 1.0], 1);
        let b = wm(&s, &[3.0, 3.0, 3.0, 3.0], 3);
        assert_eq!(fedavg(std::slice::from_ref(&a)).unwrap(), a.params);
        assert_eq!(fedavg(&[a, b]).unwrap().values(), &[2.5; 4]);
        let p = wm(&s, &[1.0, -2.0, 0.5, 4.0], 7);
        let q = wm(&s, &[-1.0, 2.0, -0.5, -4.0], 7);
        assert!(fedavg(&[p, q]).unwrap().values().iter().all(|v| *v == 0.0));
        assert!(matches!(fedavg(&[]), Err(Error::Empty(_))));
        let other = Arc::new(ModelSpec::new(2, vec![], 2).unwrap());
        let r = WeightedModel::new(ParamVector::zeros(other), 1).unwrap();
        assert!(matches!(fedavg(&[scalar(&s, 0.0, 1), r]), Err(Error::SpecMismatch)));
    }

    #[test]
    fn weight_adjusted_examples() {
        let s = spec_len(4);
        let labeled = vec![scalar(&s, 1.0, 40)];
        let unlabeled: Vec<_> = (0..9).map(|i| scalar(&s, i as f64, 100 + i)).collect();
        let c = weight_adjusted_coefficients(&labeled, &unlabeled, 0.5).unwrap();
        assert_eq!(c[0], 0.5);
        assert!((c[1..].iter().sum::<f64>() - 0.5).abs() < 1e-15);

        let two = vec![scalar(&s, 1.0, 1), scalar(&s, 2.0, 3)];
        let c = weight_adjusted_coefficients(&two, &unlabeled, 0.5).unwrap();
        assert_eq!(&c[..2], &[0.125, 0.375]);

        // natural share reduces to fedavg
        let u = vec![scalar(&s, 5.0, 4), scalar(&s, -1.0, 2)];
        let adj = weight_adjusted_avg(&two, &u, 0.4).unwrap();
        let all: Vec<_> = two.iter().chain(&u).cloned().collect();
        let plain = fedavg(&all).unwrap();
        for (a, b) in adj.values().iter().zip(plain.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(weight_adjusted_avg(&[], &u, 0.5).is_err());
        assert!(weight_adjusted_avg(&two, &[], 0.5).is_err());
        assert!(weight_adjusted_avg(&two, &u, 1.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let s = spec_len(4);
        let a = ParamVector::new(s.clone(), vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let z = ParamVector::zeros(s);
        assert_eq!(model_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(model_distance(&a, &z).unwrap(), 5.0);
    }

    #[test]
    fn dma_weights_reduce_to_size_weights() {
        let s = spec_len(4);
        let models = vec![scalar(&s, 0.0, 10), scalar(&s, 1.0, 30), scalar(&s, 5.0, 60)];
        assert_eq!(dma_weights(&models, 0.0).unwrap(), size_weights(&models));
        let same = vec![scalar(&s, 2.0, 10), scalar(&s, 2.0, 30)];
        assert_eq!(dma_weights(&same, 50.0).unwrap(), vec![0.25, 0.75]);
        assert!(dma_weights(&models, -1.0).is_err());
    }

    #[test]
    fn dma_scalar_instance() {
        // 1-D models θ=[0], θ=[1] with N=[100, 300], β=100.
        let s = Arc::new(ModelSpec::new(1, vec![], 2).unwrap());
        let one = |v: f64, n| {
            let mut vals = vec![0.0; 4];
            vals[0] = v;
            wm(&s, &vals, n)
        };
        let w = dma_weights(&[one(0.0, 100), one(1.0, 300)], 100.0).unwrap();
        let a = 0.25 * (-0.75f64).exp();
        let b = 0.75 * (-1.0f64 / 12.0).exp();
        assert!((w[0] - a / (a + b)).abs() < 1e-12);
        assert!((w[0] - 0.146131).abs() < 1e-5);
        assert!((w[1] - 0.853869).abs() < 1e-5);
    }

    #[test]
    fn dma_survives_large_beta() {
        let s = spec_len(4);
        let models = vec![scalar(&s, 0.0, 10), scalar(&s, 0.5, 10), scalar(&s, 3.0, 10)];
        let w = dma_weights(&models, 10_000.0).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dma_aggregate_examples() {
        let s = spec_len(4);
        let models = vec![wm(&s, &[0.0, 1.0, 2.0, 3.0], 5), wm(&s, &[1.0, 0.0, -2.0, 3.5], 9)];
        assert_eq!(dma_aggregate(&models, 0.0).unwrap(), fedavg(&models).unwrap());
        assert_eq!(dma_aggregate(&models[..1], 7.0).unwrap(), models[0].params);
    }

    #[test]
    fn consensus_examples() {
        let s = spec_len(4);
        let a = ParamVector::new(s.clone(), vec![0.0; 4]).unwrap();
        let b = ParamVector::new(s.clone(), vec![2.0; 4]).unwrap();
        let c = ParamVector::new(s, vec![1.0, -3.0, 0.5, 8.0]).unwrap();
        assert_eq!(consensus_mean(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(consensus_mean(&[a.clone(), b.clone()]).unwrap().values(), &[1.0; 4]);
        let x = consensus_mean(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = consensus_mean(&[c, a, b]).unwrap();
        for (u, v) in x.values().iter().zip(y.values()) {
            assert!((u - v).abs() < 1e-15);
        }
        assert!(consensus_mean(&[]).is_err());
    }

    #[test]
    fn far_model_loses_weight_as_it_moves_away() {
        // K=3 scalar instance; the third model is pushed radially outwards
        let s = spec_len(4);
        let sizes = [20.0, 30.0, 25.0];
        let mut last = f64::INFINITY;
        for step in 0..8 {
            let far = 2.0 + step as f64 * 0.5;
            let thetas = [0.0, 0.4, far];
            let oracle = scalar_oracle(&thetas, &sizes, 5.0, 4.0);
            let models: Vec<_> = thetas
                .iter()
                .zip(sizes)
                .map(|(t, n)| scalar(&s, *t, n as usize))
                .collect();
            let w = dma_weights(&models, 5.0).unwrap();
            for (a, b) in w.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(w[2] < last);
            last = w[2];
        }
    }

    #[test]
    fn huge_beta_concentrates_on_the_closest_model() {
        let s = spec_len(4);
        let thetas = [0.0, 1.0, 0.2];
        let sizes = [10, 10, 40];
        let models: Vec<_> = thetas.iter().zip(sizes).map(|(t, n)| scalar(&s, *t, n)).collect();
        let w = dma_weights(&models, 1e6).unwrap();
        // avg = 0.3; distance / N = [0.06, 0.14, 0.005]
        assert!(w[2] > 0.999, "{w:?}");
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        (1usize..6).prop_flat_map(|k| {
            (
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 6), k),
                proptest::collection::vec(1usize..500, k),
            )
        })
    }

    proptest! {
        #[test]
        fn aggregates_are_convex_and_normalized((vals, sizes) in instance(), beta in 0.0f64..5.0) {
            let s = spec_len(6);
            let models: Vec<_> = vals.iter().zip(&sizes).map(|(v, n)| wm(&s, v, *n)).collect();
            let w = dma_weights(&models, beta).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|x| *x > 0.0 && *x <= 1.0));
            let outputs = [
                fedavg(&models).unwrap(),
                dma_aggregate(&models, beta).unwrap(),
                consensus_mean(&models.iter().map(|m| m.params.clone()).collect::<Vec<_>>()).unwrap(),
            ];
            for out in &outputs {
                for j in 0..6 {
                    let lo = vals.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(out.values()[j] >= lo - 1e-12 && out.values()[j] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn aggregates_are_permutation_invariant((vals, sizes) in instance(), beta in 0.0f64..50.0, rot in 0usize..6) {
            let s = spec_len(6);
            let models: Vec<_> = vals.iter().zip(&sizes).map(|(v, n)| wm(&s, v, *n)).collect();
            let mut shuffled = models.clone();
            let r = rot % models.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            let pairs = [
                (fedavg(&models).unwrap(), fedavg(&shuffled).unwrap()),
                (dma_aggregate(&models, beta).unwrap(), dma_aggregate(&shuffled, beta).unwrap()),
            ];
            for (a, b) in &pairs {
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn distance_is_symmetric(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let s = spec_len(4);
            let a = ParamVector::new(s.clone(), a).unwrap();
            let b = ParamVector::new(s, b).unwrap();
            prop_assert_eq!(model_distance(&a, &b).unwrap(), model_distance(&b, &a).unwrap());
        }
    }
}

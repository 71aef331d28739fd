//! Accuracy, macro one-vs-rest AUC, macro precision and macro recall.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc_macro_ovr: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
}

/// Mann-Whitney AUC with midranks for ties. `None` unless both classes are
/// present.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Macro average of one-vs-rest AUCs over classes present in `labels`.
/// `scores[i][c]` is the score of sample `i` for class `c`.
pub fn auc_macro_ovr(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Option<f64> {
    let per_class: Vec<f64> = (0..num_classes)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            roc_auc(&s, &pos)
        })
        .collect();
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Metrics from predicted score rows; classes absent from `labels` are left
/// out of every macro average.
pub fn report_from_scores(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let predicted: Vec<usize> = scores.iter().map(|s| crate::nn::argmax(s)).collect();
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();

    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        pred_count[p] += 1;
        true_count[l] += 1;
        if p == l {
            tp[l] += 1;
        }
    }
    let present: Vec<usize> = (0..num_classes).filter(|&c| true_count[c] > 0).collect();
    if present.len() < num_classes {
        debug!(
            "{} of {num_classes} classes absent from test labels; excluded from macro averages",
            num_classes - present.len()
        );
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let k = present.len() as f64;
    let precision = present.iter().map(|&c| ratio(tp[c], pred_count[c])).sum::<f64>() / k;
    let recall = present.iter().map(|&c| ratio(tp[c], true_count[c])).sum::<f64>() / k;
    // a single present class has no negatives; AUC is undefined there
    let auc = auc_macro_ovr(scores, labels, num_classes).unwrap_or(0.5);

    Ok(MetricsReport {
        accuracy: correct as f64 / labels.len() as f64,
        auc_macro_ovr: auc,
        precision_macro: precision,
        recall_macro: recall,
    })
}

/// Scores the model on every row of `test`.
pub fn evaluate(params: &ParamVector, test: &Dataset) -> Result<MetricsReport> {
    let scores = (0..test.len())
        .map(|i| Ok(forward(params, test.row(i))?.probs().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    report_from_scores(&scores, test.labels(), test.num_classes())
}

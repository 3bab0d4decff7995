//! Evaluation: ROC/AUC, the validation-derived operating threshold, and
//! test-set sensitivity/specificity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_both_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {n_pos} positive / {n_neg} negative"
        )));
    }
    Ok((n_pos, n_neg))
}

/// AUC as the Mann-Whitney statistic: the fraction of (positive, negative)
/// pairs where the positive outscores the negative, ties counted 1/2.
/// Computed via tied-rank averaging, which is exactly equal to the pairwise
/// count.
pub fn compute_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let (n_pos, n_neg) = check_both_classes(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average rank
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Operating points of the ROC curve: (fpr, tpr, threshold) for every
/// distinct score used as a `>=` threshold, in descending threshold order,
/// framed by the (0, 0) and (1, 1) endpoints.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    let (n_pos, n_neg) = check_both_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut out = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64, t));
    }
    Ok(out)
}

/// Threshold maximizing Youden's J = sensitivity + specificity - 1 over the
/// validation ROC, ties broken toward the higher threshold. Prediction rule
/// is `score >= threshold`.
pub fn optimal_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_both_classes(labels)?;
    let points = roc_points(scores, labels)?;
    let mut best_j = f64::NEG_INFINITY;
    let mut best_t = f64::NAN;
    // skip the artificial +inf point; thresholds are observed scores,
    // visited in descending order so ties keep the higher threshold
    for &(fpr, tpr, t) in &points[1..] {
        let j = tpr - fpr;
        if j > best_j {
            best_j = j;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// sens = TP/(TP+FN), spec = TN/(TN+FP), predicted positive iff
/// score >= threshold.
pub fn sensitivity_specificity(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let (n_pos, n_neg) = check_both_classes(labels)?;
    let mut tp = 0usize;
    let mut tn = 0usize;
    for (&s, &l) in scores.iter().zip(labels.iter()) {
        let pred_pos = s >= threshold;
        if l && pred_pos {
            tp += 1;
        }
        if !l && !pred_pos {
            tn += 1;
        }
    }
    Ok((tp as f64 / n_pos as f64, tn as f64 / n_neg as f64))
}

/// Per-trial evaluation artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment_id: String,
    pub trial_id: usize,
    pub auc: f64,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// instance count of the experiment's combination
    pub n_instances: usize,
    pub seed: u64,
    /// criterion used for the operating threshold
    pub threshold_rule: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.auc) || !in_unit(self.sensitivity) || !in_unit(self.specificity) {
            return Err(Error::Validation("metrics must lie in [0, 1]".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Validation("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (n - 1); sd is 0 for a single value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0);
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

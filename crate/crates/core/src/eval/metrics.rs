//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ba: f64,
    pub auc: f64,
    pub sen: f64,
    pub spe: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 4] = ["ba", "auc", "sen", "spe"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ba" => Some(self.ba),
            "auc" => Some(self.auc),
            "sen" => Some(self.sen),
            "spe" => Some(self.spe),
            _ => None,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.ba, self.auc, self.sen, self.spe]
    }

    pub(crate) fn from_values(v: [f64; 4]) -> Self {
        MetricSet {
            ba: v[0],
            auc: v[1],
            sen: v[2],
            spe: v[3],
        }
    }
}

/// Sensitivity, specificity and balanced accuracy at `threshold` (a score at
/// or above it predicts class 1), plus the threshold-free AUC.
pub fn compute_metrics(labels: &[u8], scores: &[f64], threshold: f64) -> Result<MetricSet> {
    if labels.len() != scores.len() {
        return Err(Error::shape("compute_metrics", labels.len(), scores.len()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Contract(format!("score {bad} outside [0, 1]")));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (1, true) => tp += 1,
            (1, false) => fn_ += 1,
            (_, false) => tn += 1,
            (_, true) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(Error::Contract(
            "metrics need at least one subject of each class (AUC is undefined otherwise)".into(),
        ));
    }
    let sen = tp as f64 / (tp + fn_) as f64;
    let spe = tn as f64 / (tn + fp) as f64;
    Ok(MetricSet {
        ba: (sen + spe) / 2.0,
        auc: auc(labels, scores),
        sen,
        spe,
    })
}

/// Mann–Whitney AUC from mid-ranks: the share of (positive, negative) pairs
/// ordered correctly, ties counting one half.
fn auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        pos_rank_sum += mid_rank * order[start..end].iter().filter(|&&i| labels[i] == 1).count() as f64;
        start = end;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let m = compute_metrics(&[1, 1, 0, 0], &[0.9, 0.8, 0.2, 0.1], 0.5).unwrap();
        assert_eq!(m, MetricSet { ba: 1.0, auc: 1.0, sen: 1.0, spe: 1.0 });
    }

    #[test]
    fn three_of_four_pairs_concordant() {
        let m = compute_metrics(&[1, 0, 1, 0], &[0.9, 0.8, 0.4, 0.1], 0.5).unwrap();
        assert_eq!(m, MetricSet { ba: 0.5, auc: 0.75, sen: 0.5, spe: 0.5 });
    }

    #[test]
    fn all_ties() {
        let m = compute_metrics(&[1, 0, 0, 1, 0], &[0.3; 5], 0.5).unwrap();
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(compute_metrics(&[1, 1], &[0.2, 0.7], 0.5).is_err());
        assert!(compute_metrics(&[0, 1], &[0.2, 1.5], 0.5).is_err());
    }
}

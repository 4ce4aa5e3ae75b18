//! Repeated stratified k-fold planning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    pub inner_val_fraction: f64,
    pub seed: u64,
    /// One map per repeat: subject id → test fold index.
    pub assignments: Vec<BTreeMap<String, usize>>,
}

/// One (train, validation, test) partition, as indices into the cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Plans `repeats` independent stratified k-fold partitions. Repeat `r`
/// shuffles with seed `seed + r`.
pub fn stratified_folds(
    cohort: &Cohort,
    k: usize,
    repeats: usize,
    inner_val_fraction: f64,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Contract(format!("k must be at least 2, got {k}")));
    }
    if !(inner_val_fraction > 0.0 && inner_val_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "inner_val_fraction must lie in (0, 1), got {inner_val_fraction}"
        )));
    }
    let counts = cohort.class_counts();
    for label in 0..2u8 {
        if counts[label as usize] < k {
            return Err(Error::TooFewForFolds {
                label,
                count: counts[label as usize],
                k,
            });
        }
    }

    let assignments = (0..repeats)
        .map(|r| {
            let mut rng = seeded(seed.wrapping_add(r as u64));
            let mut map = BTreeMap::new();
            let mut offset = 0usize;
            for label in 0..2u8 {
                let mut members: Vec<usize> = (0..cohort.len())
                    .filter(|&i| cohort.subjects[i].label == label)
                    .collect();
                members.shuffle(&mut rng);
                for (pos, &i) in members.iter().enumerate() {
                    map.insert(cohort.subjects[i].subject_id.clone(), (offset + pos) % k);
                }
                offset = (offset + members.len()) % k;
            }
            map
        })
        .collect();

    Ok(FoldPlan {
        k,
        repeats,
        inner_val_fraction,
        seed,
        assignments,
    })
}

impl FoldPlan {
    /// All `repeats × k` splits, ordered by (repeat, fold). The inner
    /// validation subset is a stratified holdout of the training part.
    pub fn splits(&self, cohort: &Cohort) -> Vec<Split> {
        let mut out = Vec::with_capacity(self.repeats * self.k);
        for (r, assign) in self.assignments.iter().enumerate() {
            for fold in 0..self.k {
                let (test, rest): (Vec<usize>, Vec<usize>) = (0..cohort.len())
                    .partition(|&i| assign[&cohort.subjects[i].subject_id] == fold);
                let labels: Vec<u8> = rest.iter().map(|&i| cohort.subjects[i].label).collect();
                let holdout_seed = derive_seed(self.seed, "inner-val", &[r as u64, fold as u64]);
                let (train_pos, val_pos) =
                    stratified_holdout(&labels, self.inner_val_fraction, holdout_seed);
                out.push(Split {
                    repeat: r,
                    fold,
                    train: train_pos.iter().map(|&p| rest[p]).collect(),
                    val: val_pos.iter().map(|&p| rest[p]).collect(),
                    test,
                });
            }
        }
        out
    }
}

/// Splits positions `0..labels.len()` into (kept, held out), holding out
/// `round(fraction · n_c)` members of each class (at least one when the class
/// has two or more members). Both outputs are sorted.
pub fn stratified_holdout(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seeded(seed);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for label in 0..2u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let mut n_held = (fraction * n as f64).round() as usize;
        if n >= 2 {
            n_held = n_held.clamp(1, n - 1);
        } else {
            n_held = 0;
        }
        held.extend_from_slice(&members[..n_held]);
        kept.extend_from_slice(&members[n_held..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

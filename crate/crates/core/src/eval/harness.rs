//! Repeated stratified cross-validation of a training method.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricSet, DEFAULT_THRESHOLD};
use super::wilcoxon::{wilcoxon_signed_rank, MIN_PAIRS};
use crate::data::{stratified_folds, Cohort, Split};
use crate::error::{Error, Result, Violations};
use crate::rng::derive_seed;
use crate::train::{finetune, initial_params, predict_scores, pretrain, TrainConfig, TrainedModel};

/// Fold layout and scoring shared by every method in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub k: usize,
    pub repeats: usize,
    /// Share of each training part held out for best-epoch selection.
    pub inner_val_fraction: f64,
    pub threshold: f64,
    /// Seeds the fold plan and, per (repeat, fold), the training run.
    pub seed: u64,
    /// Folds trained concurrently.
    pub max_workers: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            k: 10,
            repeats: 50,
            inner_val_fraction: 1.0 / 9.0,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            max_workers: 1,
        }
    }
}

impl HarnessConfig {
    pub fn desk() -> Self {
        HarnessConfig {
            k: 5,
            repeats: 3,
            ..HarnessConfig::default()
        }
    }

    pub(crate) fn violations(&self) -> Violations {
        let mut v = Violations::default();
        v.check(self.k >= 2, "k", "must be at least 2");
        v.check(self.repeats >= 1, "repeats", "must be at least 1");
        v.check(
            self.inner_val_fraction > 0.0 && self.inner_val_fraction < 1.0,
            "inner_val_fraction",
            "must lie in (0, 1)",
        );
        v.check((0.0..=1.0).contains(&self.threshold), "threshold", "must lie in [0, 1]");
        v.check(self.max_workers >= 1, "max_workers", "must be at least 1");
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.violations().into_result()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Contrastive pretraining followed by fine-tuning.
    Contrastive,
    /// Fine-tuning of freshly initialized encoders on concatenated embeddings.
    BaselineConcat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub method: Method,
    /// Its `seed` is replaced per fold by one derived from the harness seed.
    pub train: TrainConfig,
}

impl MethodConfig {
    pub fn contrastive(name: impl Into<String>, train: TrainConfig) -> Self {
        MethodConfig {
            name: name.into(),
            method: Method::Contrastive,
            train,
        }
    }

    pub fn baseline(train: TrainConfig) -> Self {
        MethodConfig {
            name: "baseline_concat".into(),
            method: Method::BaselineConcat,
            train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
    pub best_epoch: Option<usize>,
    pub degenerate_css_batches: usize,
    pub test_subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub metric: String,
    pub p_value: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub harness: HarnessConfig,
    pub method: MethodConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Wall-clock creation time; the only field that differs between reruns.
    pub generated_at: String,
    pub config: ReportConfig,
    pub per_fold: Vec<FoldResult>,
    pub mean: MetricSet,
    /// Sample standard deviation over all fold × repeat values.
    pub sd: MetricSet,
    pub comparisons: Vec<Comparison>,
}

pub const TIMESTAMP_KEY: &str = "generated_at";

impl EvalReport {
    pub fn metric_values(&self, metric: &str) -> Vec<f64> {
        self.per_fold
            .iter()
            .map(|f| f.metrics.get(metric).expect("known metric name"))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report as JSON with the timestamp key removed.
    pub fn json_without_timestamp(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove(TIMESTAMP_KEY);
        }
        Ok(value)
    }
}

/// Runs `method` on every (repeat, fold) split: pretraining (unless the
/// method is the baseline), fine-tuning with best-epoch selection on the inner
/// validation subset, then scoring of the held-out fold.
pub fn cross_validate(cohort: &Cohort, harness: &HarnessConfig, method: &MethodConfig) -> Result<EvalReport> {
    harness.validate()?;
    method.train.validate()?;
    let plan = stratified_folds(cohort, harness.k, harness.repeats, harness.inner_val_fraction, harness.seed)?;
    let splits = plan.splits(cohort);

    let run = |split: &Split| run_fold(cohort, split, harness, method);
    let per_fold: Vec<FoldResult> = if harness.max_workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(harness.max_workers)
            .build()
            .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
        pool.install(|| splits.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        splits.iter().map(run).collect::<Result<Vec<_>>>()?
    };

    let (mean, sd) = summarize(&per_fold);
    Ok(EvalReport {
        method: method.name.clone(),
        generated_at: chrono::Utc::now().to_rfc3339(),
        config: ReportConfig {
            harness: harness.clone(),
            method: method.clone(),
        },
        per_fold,
        mean,
        sd,
        comparisons: Vec::new(),
    })
}

fn run_fold(cohort: &Cohort, split: &Split, harness: &HarnessConfig, method: &MethodConfig) -> Result<FoldResult> {
    let train = cohort.subset(&split.train);
    let val = cohort.subset(&split.val);
    let test = cohort.subset(&split.test);
    let config = TrainConfig {
        seed: derive_seed(harness.seed, "fold-train", &[split.repeat as u64, split.fold as u64]),
        ..method.train.clone()
    };
    let pretrained = match method.method {
        Method::Contrastive => pretrain(&train, &config)?,
        Method::BaselineConcat => TrainedModel::untrained(initial_params(&train, &config)?),
    };
    let model = finetune(&pretrained, &train, &val, &config)?;
    let scores = predict_scores(&model.params, &test, config.modalities)?;
    let metrics = compute_metrics(&test.labels(), &scores, harness.threshold)?;
    Ok(FoldResult {
        repeat: split.repeat,
        fold: split.fold,
        metrics,
        best_epoch: model.best_epoch,
        degenerate_css_batches: model.degenerate_css_batches,
        test_subjects: test.subjects.iter().map(|s| s.subject_id.clone()).collect(),
    })
}

/// Mean and sample standard deviation of each metric.
pub(crate) fn summarize(folds: &[FoldResult]) -> (MetricSet, MetricSet) {
    let n = folds.len() as f64;
    let mut mean = [0.0; 4];
    for f in folds {
        for (m, v) in mean.iter_mut().zip(f.metrics.values()) {
            *m += v / n;
        }
    }
    let mut sd = [0.0; 4];
    if folds.len() > 1 {
        for f in folds {
            for ((s, v), m) in sd.iter_mut().zip(f.metrics.values()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut sd {
            *s = (*s / (n - 1.0)).sqrt();
        }
    }
    (MetricSet::from_values(mean), MetricSet::from_values(sd))
}

/// Paired signed-rank comparison of two reports on one metric, pairing
/// folds by (repeat, fold). `None` when fewer than six folds are shared.
pub fn compare_reports(a: &EvalReport, b: &EvalReport, metric: &str) -> Result<Option<Comparison>> {
    if !MetricSet::NAMES.contains(&metric) {
        return Err(Error::Contract(format!("unknown metric {metric:?}")));
    }
    let index: BTreeMap<(usize, usize), f64> = b
        .per_fold
        .iter()
        .map(|f| ((f.repeat, f.fold), f.metrics.get(metric).expect("known metric")))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .per_fold
        .iter()
        .filter_map(|f| {
            index
                .get(&(f.repeat, f.fold))
                .map(|&y| (f.metrics.get(metric).expect("known metric"), y))
        })
        .unzip();
    if xs.len() < MIN_PAIRS {
        return Ok(None);
    }
    let test = wilcoxon_signed_rank(&xs, &ys)?;
    Ok(Some(Comparison {
        method_a: a.method.clone(),
        method_b: b.method.clone(),
        metric: metric.into(),
        p_value: test.p_value,
        n_pairs: xs.len(),
    }))
}

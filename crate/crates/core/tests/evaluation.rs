mod common;

use std::collections::BTreeMap;

use cmcss::data::{stratified_folds, Cohort};
use cmcss::eval::{
    ablate_lambda, ablate_loss_components, ablate_modality, baseline_concat, compute_metrics, cross_validate,
    wilcoxon_signed_rank, HarnessConfig, MethodConfig, ModalityAblation, DEFAULT_LAMBDA_GRID,
};
use cmcss::losses::ContrastiveTerms;
use cmcss::train::TrainConfig;
use cmcss::Error;
use common::*;
use proptest::prelude::*;
use rand::Rng as _;

fn tiny_train() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        pretrain_epochs: 2,
        finetune_epochs: 2,
        model: reduced_model(),
        ..TrainConfig::default()
    }
}

fn tiny_harness() -> HarnessConfig {
    HarnessConfig {
        k: 2,
        repeats: 1,
        ..HarnessConfig::default()
    }
}

#[test]
fn wilcoxon_matches_enumeration() {
    let mut r = rng(31);
    for trial in 0..300 {
        let n = 6 + trial % 7;
        // coarse grid values produce ties and zero differences
        let a: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..6u8)) * 0.25).collect();
        let b: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..6u8)) * 0.25).collect();
        let got = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
        let want = wilcoxon_enumerated(&a, &b);
        assert!((got - want).abs() < 1e-12, "{a:?} {b:?}: {got} vs {want}");
    }
    let mut r = rng(32);
    for n in 6..=12 {
        let a: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let got = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
        assert!((got - wilcoxon_enumerated(&a, &b)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_matches_pair_count(seed in any::<u64>(), n in 2usize..=50, coarse in any::<bool>()) {
        let mut r = rng(seed);
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(r.random_range(0..5u8)) / 4.0 } else { r.random::<f64>() })
            .collect();
        let m = compute_metrics(&labels, &scores, 0.5).unwrap();
        prop_assert!((m.auc - auc_pairs(&labels, &scores)).abs() < 1e-12);
        prop_assert!((m.ba - (m.sen + m.spe) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn folds_are_stratified(seed in any::<u64>(), n0 in 5usize..40, n1 in 5usize..40, k in 2usize..6) {
        let cohort = labelled_cohort(n0, n1, seed);
        let plan = stratified_folds(&cohort, k, 2, 1.0 / 9.0, seed).unwrap();
        for assign in &plan.assignments {
            for fold in 0..k {
                for (label, total) in [(0u8, n0), (1u8, n1)] {
                    let count = cohort
                        .subjects
                        .iter()
                        .filter(|s| s.label == label && assign[&s.subject_id] == fold)
                        .count();
                    let expected = total as f64 / k as f64;
                    prop_assert!((count as f64 - expected).abs() < 1.0 + 1e-9);
                }
            }
        }
    }
}

fn labelled_cohort(n0: usize, n1: usize, seed: u64) -> Cohort {
    let mut cohort = reduced_cohort(n0 + n1, seed % 97);
    for (i, s) in cohort.subjects.iter_mut().enumerate() {
        s.label = u8::from(i >= n0);
    }
    cohort
}

#[test]
fn every_subject_is_tested_once_per_repeat() {
    let cohort = reduced_cohort(64, 1);
    let plan = stratified_folds(&cohort, 5, 3, 1.0 / 9.0, 4).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let splits = plan.splits(&cohort);
    assert_eq!(splits.len(), 15);
    for split in &splits {
        for &i in &split.test {
            *counts.entry(cohort.subjects[i].subject_id.as_str()).or_default() += 1;
        }
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }
    assert_eq!(counts.len(), 64);
    assert!(counts.values().all(|&c| c == 3));
}

#[test]
fn ten_folds_fifty_repeats_give_500_splits() {
    let cohort = reduced_cohort(80, 2);
    let plan = stratified_folds(&cohort, 10, 50, 1.0 / 9.0, 0).unwrap();
    assert_eq!(plan.splits(&cohort).len(), 500);
}

#[test]
fn too_few_subjects_for_k_names_the_bound() {
    let cohort = labelled_cohort(8, 3, 0);
    let err = stratified_folds(&cohort, 5, 1, 1.0 / 9.0, 0).unwrap_err();
    assert!(matches!(err, Error::TooFewForFolds { label: 1, count: 3, k: 5 }));
    assert!(err.to_string().contains("k <= 3"));
}

#[test]
fn lambda_zero_equals_css_only() {
    let cohort = reduced_cohort(16, 5);
    let zero = TrainConfig {
        lambda: 0.0,
        ..tiny_train()
    };
    let css_only = TrainConfig {
        terms: ContrastiveTerms::CssOnly,
        ..tiny_train()
    };
    let a = cross_validate(&cohort, &tiny_harness(), &MethodConfig::contrastive("x", zero)).unwrap();
    let b = cross_validate(&cohort, &tiny_harness(), &MethodConfig::contrastive("x", css_only)).unwrap();
    assert_eq!(a.per_fold, b.per_fold);
}

#[test]
fn reports_are_deterministic_apart_from_the_timestamp() {
    let cohort = reduced_cohort(16, 6);
    let method = MethodConfig::contrastive("joint", tiny_train());
    let a = cross_validate(&cohort, &tiny_harness(), &method).unwrap();
    let parallel = HarnessConfig {
        max_workers: 2,
        ..tiny_harness()
    };
    let b = cross_validate(&cohort, &parallel, &method).unwrap();
    assert_eq!(a.per_fold, b.per_fold);
    let again = cross_validate(&cohort, &tiny_harness(), &method).unwrap();
    assert_eq!(a.json_without_timestamp().unwrap(), again.json_without_timestamp().unwrap());
}

#[test]
fn ablation_tables_have_the_expected_rows() {
    let cohort = reduced_cohort(16, 7);
    let (h, t) = (tiny_harness(), tiny_train());

    let lambda = ablate_lambda(&cohort, &DEFAULT_LAMBDA_GRID, &h, &t).unwrap();
    assert_eq!(lambda.rows.len(), 6);
    let losses = ablate_loss_components(&cohort, &h, &t).unwrap();
    let names: Vec<&str> = losses.rows.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(names, ["cmc_only", "css_only", "joint"]);
    assert_eq!(losses.row("joint").unwrap().report.config.method.train.lambda, 1.0);

    let drop = ablate_modality(&cohort, ModalityAblation::DropOne, &h, &t).unwrap();
    assert_eq!(drop.rows.len(), 6);
    assert_eq!(drop.rows.last().unwrap().setting, "all");
    for row in &drop.rows[..5] {
        assert_eq!(row.report.config.method.train.modalities.pairs().len(), 12);
    }
    let only = ablate_modality(&cohort, ModalityAblation::OnlyOne, &h, &t).unwrap();
    assert_eq!(only.rows.len(), 5);
    let cmc = TrainConfig {
        terms: ContrastiveTerms::CmcOnly,
        ..t.clone()
    };
    let err = ablate_modality(&cohort, ModalityAblation::OnlyOne, &h, &cmc).unwrap_err();
    assert!(err.to_string().contains("at least 2"));

    let csv = drop.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("setting,ba_mean,ba_sd,auc_mean,auc_sd,sen_mean,sen_sd,spe_mean,spe_sd,p_ba,p_auc"));

    let baseline = baseline_concat(&cohort, &h, &t).unwrap();
    let joint = cross_validate(&cohort, &h, &MethodConfig::contrastive("joint", t)).unwrap();
    let keys = |v: serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(baseline.json_without_timestamp().unwrap()), keys(joint.json_without_timestamp().unwrap()));
}

#[test]
fn ablation_comparisons_need_six_pairs() {
    let cohort = reduced_cohort(24, 8);
    let harness = HarnessConfig {
        k: 3,
        repeats: 2,
        ..HarnessConfig::default()
    };
    let table = ablate_lambda(&cohort, &[0.0, 1.0], &harness, &tiny_train()).unwrap();
    let row = table.row("lambda_0").unwrap();
    assert_eq!(row.report.comparisons.len(), 2);
    assert!(table.row("lambda_1").unwrap().report.comparisons.is_empty());
    assert!(row.report.comparisons.iter().all(|c| c.n_pairs == 6 && c.method_b == "lambda_1"));
}

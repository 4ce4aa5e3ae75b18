//! Pretrain, fine-tune the fusion head on a training split with early
//! stopping on a validation split, then classify held-out subjects.
//!
//! cargo run --release --example finetune

use cmcss::data::{generate_synthetic_cohort, stratified_holdout, CohortConfig};
use cmcss::eval::{compute_metrics, DEFAULT_THRESHOLD};
use cmcss::train::{finetune, pretrain, predict_scores, TrainConfig};

fn main() -> cmcss::Result<()> {
    let cohort = generate_synthetic_cohort(&CohortConfig::desk())?;
    let (rest, test) = stratified_holdout(&cohort.labels(), 0.25, 1);
    let rest = cohort.subset(&rest);
    let test = cohort.subset(&test);
    let (train, val) = stratified_holdout(&rest.labels(), 1.0 / 9.0, 2);
    let (train, val) = (rest.subset(&train), rest.subset(&val));

    let config = TrainConfig::desk();
    let pretrained = pretrain(&train, &config)?;
    let model = finetune(&pretrained, &train, &val, &config)?;
    println!(
        "train {} / val {} / test {}; best fine-tune epoch {:?}",
        train.len(),
        val.len(),
        test.len(),
        model.best_epoch
    );

    let scores = predict_scores(&model.params, &test, config.modalities)?;
    for (s, p) in test.subjects.iter().zip(&scores).take(5) {
        println!("  {:<4} label {}  p(high risk) {p:.3}", s.subject_id, s.label);
    }
    let m = compute_metrics(&test.labels(), &scores, DEFAULT_THRESHOLD)?;
    println!("test BA {:.3}  AUC {:.3}  SEN {:.3}  SPE {:.3}", m.ba, m.auc, m.sen, m.spe);
    Ok(())
}

//! Contrastive pretraining on a synthetic cohort, then a check that the
//! modalities of one subject ended up closer to each other than to other
//! subjects' modalities.
//!
//! cargo run --release --example pretrain -- [epochs]

use cmcss::data::{generate_synthetic_cohort, CohortConfig};
use cmcss::eval::alignment_gap;
use cmcss::train::{pretrain, TrainConfig};

fn main() -> cmcss::Result<()> {
    let epochs = std::env::args().nth(1).map_or(200, |s| s.parse().expect("epochs"));
    let cohort = generate_synthetic_cohort(&CohortConfig::desk())?;
    let config = TrainConfig {
        pretrain_epochs: epochs,
        ..TrainConfig::desk()
    };
    let start = std::time::Instant::now();
    let model = pretrain(&cohort, &config)?;
    for rec in model.history.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:4}  total {:.4}  cmc {:.4}  css {:.4}",
            rec.epoch,
            rec.loss_total,
            rec.loss_cmc.unwrap_or(f64::NAN),
            rec.loss_css.unwrap_or(f64::NAN)
        );
    }
    let gap = alignment_gap(&model.params, &cohort, config.modalities)?;
    println!(
        "same-subject cosine {:.4}, cross-subject cosine {:.4}, gap {:.4} ({:.1?})",
        gap.same_subject,
        gap.cross_subject,
        gap.gap(),
        start.elapsed()
    );
    Ok(())
}

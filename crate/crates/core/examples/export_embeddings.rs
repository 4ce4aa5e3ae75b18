//! Pretrain briefly and export one embedding row per (subject, modality) for
//! external visualisation.
//!
//! cargo run --release --example export_embeddings -- [out.csv]

use cmcss::data::{generate_synthetic_cohort, CohortConfig};
use cmcss::eval::export_embeddings;
use cmcss::train::{pretrain, TrainConfig};

fn main() -> cmcss::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "embeddings.csv".into());
    let cohort = generate_synthetic_cohort(&CohortConfig::desk())?;
    let config = TrainConfig {
        pretrain_epochs: 50,
        ..TrainConfig::desk()
    };
    let model = pretrain(&cohort, &config)?;
    export_embeddings(&model.params, &cohort, config.modalities, &path)?;
    let text = std::fs::read_to_string(&path).expect("written file");
    for line in text.lines().take(4) {
        println!("{line}");
    }
    println!("{} rows in {path}", text.lines().count() - 1);
    Ok(())
}

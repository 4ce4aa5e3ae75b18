//! Ablations over λ, the loss components, or the modalities. Writes one CSV
//! table and one JSON report per setting.
//!
//! cargo run --release --example ablation -- [lambda|losses|drop|only] [out_dir]

use cmcss::data::{generate_synthetic_cohort, CohortConfig};
use cmcss::eval::{
    ablate_lambda, ablate_loss_components, ablate_modality, HarnessConfig, ModalityAblation, DEFAULT_LAMBDA_GRID,
};
use cmcss::train::TrainConfig;

fn main() -> cmcss::Result<()> {
    let mut args = std::env::args().skip(1);
    let which = args.next().unwrap_or_else(|| "losses".into());
    let out = args.next().unwrap_or_else(|| "ablation".into());
    let cohort = generate_synthetic_cohort(&CohortConfig {
        snr: 2.0,
        ..CohortConfig::desk()
    })?;
    let harness = HarnessConfig {
        repeats: 1,
        ..HarnessConfig::desk()
    };
    let train = TrainConfig::desk();
    let table = match which.as_str() {
        "lambda" => ablate_lambda(&cohort, &DEFAULT_LAMBDA_GRID, &harness, &train)?,
        "drop" => ablate_modality(&cohort, ModalityAblation::DropOne, &harness, &train)?,
        "only" => ablate_modality(&cohort, ModalityAblation::OnlyOne, &harness, &train)?,
        _ => ablate_loss_components(&cohort, &harness, &train)?,
    };
    print!("{}", table.to_csv());
    for path in table.write(&out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

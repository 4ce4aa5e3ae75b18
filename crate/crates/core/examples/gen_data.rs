//! Generate a synthetic five-modality cohort, write it as CSV files plus a
//! manifest, and read it back.
//!
//! cargo run --release --example gen_data -- [out_dir] [snr]

use cmcss::data::{generate_synthetic_cohort, load_cohort, save_cohort, CohortConfig};
use cmcss::ModalityKind;

fn main() -> cmcss::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "cohort".into());
    let snr = args.next().map_or(4.0, |s| s.parse().expect("snr"));
    let cohort = generate_synthetic_cohort(&CohortConfig {
        snr,
        ..CohortConfig::desk()
    })?;
    let manifest = save_cohort(&cohort, &dir)?;
    let reloaded = load_cohort(&manifest)?;
    assert_eq!(reloaded, cohort);

    let [neg, pos] = cohort.class_counts();
    println!("{} subjects ({neg} low-risk, {pos} high-risk) in {}", cohort.len(), manifest.display());
    for kind in ModalityKind::ALL {
        let (rows, cols) = cohort.dims.csv_shape(kind);
        println!("  {kind:<22} {rows} x {cols}");
    }
    Ok(())
}

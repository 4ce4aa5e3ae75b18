//! Desk-scale repeated cross-validation of the joint method against the
//! concatenation baseline, with a paired signed-rank test on the fold BAs.
//!
//! cargo run --release --example cross_validate -- [snr]

use cmcss::data::{generate_synthetic_cohort, CohortConfig};
use cmcss::eval::{compare_reports, cross_validate, EvalReport, HarnessConfig, MethodConfig};
use cmcss::train::TrainConfig;

fn show(report: &EvalReport) {
    let (m, s) = (report.mean, report.sd);
    println!(
        "{:<16} BA {:.3} ± {:.3}  AUC {:.3} ± {:.3}  SEN {:.3} ± {:.3}  SPE {:.3} ± {:.3}",
        report.method, m.ba, s.ba, m.auc, s.auc, m.sen, s.sen, m.spe, s.spe
    );
}

fn main() -> cmcss::Result<()> {
    let snr = std::env::args().nth(1).map_or(4.0, |s| s.parse().expect("snr"));
    let cohort = generate_synthetic_cohort(&CohortConfig {
        snr,
        ..CohortConfig::desk()
    })?;
    let harness = HarnessConfig::desk();
    let joint = cross_validate(&cohort, &harness, &MethodConfig::contrastive("joint", TrainConfig::desk()))?;
    show(&joint);
    let baseline = cross_validate(&cohort, &harness, &MethodConfig::baseline(TrainConfig::desk()))?;
    show(&baseline);
    if let Some(c) = compare_reports(&joint, &baseline, "ba")? {
        println!("Wilcoxon on fold BA over {} pairs: p = {:.4}", c.n_pairs, c.p_value);
    }
    Ok(())
}

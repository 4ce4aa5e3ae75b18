//! Classification metrics and the paired signed-rank test on hand-made data.
//!
//! cargo run --example metrics

use cmcss::eval::{compute_metrics, wilcoxon_signed_rank, DEFAULT_THRESHOLD};

fn main() -> cmcss::Result<()> {
    let labels = [1, 0, 1, 0];
    let scores = [0.9, 0.8, 0.4, 0.1];
    let m = compute_metrics(&labels, &scores, DEFAULT_THRESHOLD)?;
    println!("labels {labels:?} scores {scores:?}");
    println!("  SEN {} SPE {} BA {} AUC {}", m.sen, m.spe, m.ba, m.auc);

    let a: Vec<f64> = (0..10).map(|i| 0.7 + 0.01 * f64::from(i)).collect();
    let b: Vec<f64> = a.iter().map(|x| x - 0.05).collect();
    let w = wilcoxon_signed_rank(&a, &b)?;
    println!("a = b + 0.05 over 10 pairs: W+ {} p {:.5} ({:?})", w.w_plus, w.p_value, w.method);

    let noisy: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 0.02 } else { -0.03 }).collect();
    let w = wilcoxon_signed_rank(&a, &noisy)?;
    println!("mixed-sign differences: W+ {} p {:.5} ({:?})", w.w_plus, w.p_value, w.method);
    Ok(())
}

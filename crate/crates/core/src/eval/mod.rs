//! Cross-validation, metrics, paired testing, ablations and embedding export.

mod ablation;
mod harness;
mod metrics;
mod wilcoxon;

pub use ablation::{
    ablate_lambda, ablate_loss_components, ablate_modality, baseline_concat, lambda_setting, AblationRow,
    AblationTable, ModalityAblation, DEFAULT_LAMBDA_GRID,
};
pub use harness::{
    compare_reports, cross_validate, Comparison, EvalReport, FoldResult, HarnessConfig, Method, MethodConfig,
    ReportConfig, TIMESTAMP_KEY,
};
pub use metrics::{compute_metrics, MetricSet, DEFAULT_THRESHOLD};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N, MIN_PAIRS};

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Cohort, SubjectRecord};
use crate::error::{Error, Result};
use crate::modality::ModalitySet;
use crate::nn::{encode_batch, BatchEmbeddings, EncoderParams};

const CHUNK: usize = 64;

fn embed_cohort(params: &EncoderParams, cohort: &Cohort, modalities: ModalitySet) -> Result<Vec<BatchEmbeddings>> {
    cohort
        .subjects
        .chunks(CHUNK)
        .map(|chunk| {
            let records: Vec<&SubjectRecord> = chunk.iter().collect();
            encode_batch(params, &records, modalities).map(|(emb, _)| emb)
        })
        .collect()
}

/// Mean cosine between different modalities of the same subject versus
/// between different modalities of different subjects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentGap {
    pub same_subject: f64,
    pub cross_subject: f64,
}

impl AlignmentGap {
    pub fn gap(&self) -> f64 {
        self.same_subject - self.cross_subject
    }
}

/// Averages `f_u(i) · f_v(j)` over ordered modality pairs `u ≠ v`, separately
/// for `i = j` and `i ≠ j`.
pub fn alignment_gap(params: &EncoderParams, cohort: &Cohort, modalities: ModalitySet) -> Result<AlignmentGap> {
    if modalities.len() < 2 || cohort.len() < 2 {
        return Err(Error::Contract("alignment needs at least 2 modalities and 2 subjects".into()));
    }
    let chunks = embed_cohort(params, cohort, modalities)?;
    let kinds = modalities.kinds();
    let n = cohort.len();
    let stacked: Vec<ndarray::Array2<f64>> = kinds
        .iter()
        .map(|&k| {
            let views: Vec<_> = chunks.iter().map(|c| c.get(k).expect("active modality").view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
        })
        .collect();
    let (mut same, mut cross) = (0.0, 0.0);
    let mut n_pairs = 0usize;
    for (a, fu) in stacked.iter().enumerate() {
        for (b, fv) in stacked.iter().enumerate() {
            if a == b {
                continue;
            }
            n_pairs += 1;
            let sims = fu.dot(&fv.t());
            let diag: f64 = sims.diag().sum();
            same += diag;
            cross += sims.sum() - diag;
        }
    }
    let n = n as f64;
    Ok(AlignmentGap {
        same_subject: same / (n_pairs as f64 * n),
        cross_subject: cross / (n_pairs as f64 * n * (n - 1.0)),
    })
}

/// CSV with header `subject_id,modality,label,e0,…`, one row per (subject,
/// modality) in cohort order; values use the shortest exact decimal form.
pub fn embeddings_csv(params: &EncoderParams, cohort: &Cohort, modalities: ModalitySet) -> Result<String> {
    let chunks = embed_cohort(params, cohort, modalities)?;
    let e = params.model.embedding_dim;
    let mut out = String::from("subject_id,modality,label");
    for c in 0..e {
        write!(out, ",e{c}").unwrap();
    }
    out.push('\n');
    for (c, emb) in chunks.iter().enumerate() {
        for i in 0..emb.len {
            let record = &cohort.subjects[c * CHUNK + i];
            for kind in modalities.iter() {
                write!(out, "{},{},{}", record.subject_id, kind.tag(), record.label).unwrap();
                for v in emb.get(kind).expect("active modality").row(i) {
                    write!(out, ",{v}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn export_embeddings(
    params: &EncoderParams,
    cohort: &Cohort,
    modalities: ModalitySet,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let csv = embeddings_csv(params, cohort, modalities)?;
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

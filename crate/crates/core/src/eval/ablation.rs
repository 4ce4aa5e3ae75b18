//! Ablation drivers and their tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::harness::{compare_reports, cross_validate, EvalReport, HarnessConfig, MethodConfig};
use super::metrics::MetricSet;
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::losses::ContrastiveTerms;
use crate::modality::ModalitySet;
use crate::train::TrainConfig;

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.0, 0.5, 0.75, 1.0, 1.5, 2.0];

/// Metrics tested against the reference row.
const COMPARED: [&str; 2] = ["ba", "auc"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityAblation {
    DropOne,
    OnlyOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub name: String,
    /// Setting every other row is tested against.
    pub reference: Option<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    fn build(name: &str, reference: Option<String>, mut rows: Vec<AblationRow>) -> Result<Self> {
        if let Some(ref_name) = &reference {
            let ref_report = rows
                .iter()
                .find(|r| &r.setting == ref_name)
                .map(|r| r.report.clone())
                .ok_or_else(|| Error::Contract(format!("reference row {ref_name:?} missing")))?;
            for row in rows.iter_mut().filter(|r| &r.setting != ref_name) {
                for metric in COMPARED {
                    if let Some(c) = compare_reports(&row.report, &ref_report, metric)? {
                        row.report.comparisons.push(c);
                    }
                }
            }
        }
        Ok(AblationTable {
            name: name.into(),
            reference,
            rows,
        })
    }

    pub fn row(&self, setting: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    /// One line per setting: mean and SD of each metric, then the signed-rank
    /// p-values against the reference row (blank where not applicable).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting");
        for m in MetricSet::NAMES {
            write!(out, ",{m}_mean,{m}_sd").unwrap();
        }
        for m in COMPARED {
            write!(out, ",p_{m}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.setting);
            for (mean, sd) in row.report.mean.values().iter().zip(row.report.sd.values()) {
                write!(out, ",{mean:.6},{sd:.6}").unwrap();
            }
            for m in COMPARED {
                match row.report.comparisons.iter().find(|c| c.metric == m) {
                    Some(c) => write!(out, ",{:.6e}", c.p_value).unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<name>.csv` plus one `<name>_<setting>.json` report per row.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let csv = dir.join(format!("{}.csv", self.name));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        written.push(csv);
        for row in &self.rows {
            let path = dir.join(format!("{}_{}.json", self.name, row.setting));
            std::fs::write(&path, row.report.to_json()?).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn run(cohort: &Cohort, harness: &HarnessConfig, setting: String, train: TrainConfig) -> Result<AblationRow> {
    let report = cross_validate(cohort, harness, &MethodConfig::contrastive(setting.clone(), train))?;
    Ok(AblationRow { setting, report })
}

pub fn lambda_setting(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

/// One cross-validation per λ (joint objective). λ = 1 is the reference when present.
pub fn ablate_lambda(cohort: &Cohort, lambdas: &[f64], harness: &HarnessConfig, base: &TrainConfig) -> Result<AblationTable> {
    if lambdas.is_empty() {
        return Err(Error::Contract("the λ list is empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Contract(format!("λ = {bad} is not a non-negative number")));
    }
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let train = TrainConfig {
                lambda,
                terms: ContrastiveTerms::Joint,
                ..base.clone()
            };
            run(cohort, harness, lambda_setting(lambda), train)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = lambdas.contains(&1.0).then(|| lambda_setting(1.0));
    AblationTable::build("lambda", reference, rows)
}

/// CMC only, CSS only, and the joint objective, all with `base.lambda`.
pub fn ablate_loss_components(cohort: &Cohort, harness: &HarnessConfig, base: &TrainConfig) -> Result<AblationTable> {
    let rows = [
        ("cmc_only", ContrastiveTerms::CmcOnly),
        ("css_only", ContrastiveTerms::CssOnly),
        ("joint", ContrastiveTerms::Joint),
    ]
    .into_iter()
    .map(|(name, terms)| run(cohort, harness, name.into(), TrainConfig { terms, ..base.clone() }))
    .collect::<Result<Vec<_>>>()?;
    AblationTable::build("losses", Some("joint".into()), rows)
}

/// `DropOne`: five runs on four modalities plus the all-modality reference.
/// `OnlyOne`: five single-modality runs trained with the CSS term alone.
pub fn ablate_modality(
    cohort: &Cohort,
    mode: ModalityAblation,
    harness: &HarnessConfig,
    base: &TrainConfig,
) -> Result<AblationTable> {
    match mode {
        ModalityAblation::DropOne => {
            let mut rows = Vec::new();
            for kind in base.modalities.iter() {
                let train = TrainConfig {
                    modalities: ModalitySet::from_kinds(
                        &base.modalities.iter().filter(|&k| k != kind).collect::<Vec<_>>(),
                    )?,
                    ..base.clone()
                };
                rows.push(run(cohort, harness, format!("without_{}", kind.tag()), train)?);
            }
            rows.push(run(cohort, harness, "all".into(), base.clone())?);
            AblationTable::build("modality_drop", Some("all".into()), rows)
        }
        ModalityAblation::OnlyOne => {
            if base.terms == ContrastiveTerms::CmcOnly {
                return Err(Error::Contract(
                    "single-modality runs cannot use the CMC loss: it contrasts pairs of distinct modalities, so it needs at least 2; use css_only"
                        .into(),
                ));
            }
            let rows = base
                .modalities
                .iter()
                .map(|kind| {
                    let train = TrainConfig {
                        modalities: ModalitySet::only(kind),
                        terms: ContrastiveTerms::CssOnly,
                        ..base.clone()
                    };
                    run(cohort, harness, format!("only_{}", kind.tag()), train)
                })
                .collect::<Result<Vec<_>>>()?;
            AblationTable::build("modality_only", None, rows)
        }
    }
}

/// The concatenation baseline: same encoders, no contrastive pretraining.
pub fn baseline_concat(cohort: &Cohort, harness: &HarnessConfig, base: &TrainConfig) -> Result<EvalReport> {
    cross_validate(cohort, harness, &MethodConfig::baseline(base.clone()))
}

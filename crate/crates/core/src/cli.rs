//! JSON run configurations and the command implementations behind the
//! `cmcss` binary.
//!
//! A run configuration is one JSON object with the sections `cohort`,
//! `train`, `harness`, `ablation` and `paths`, plus top-level `profile`,
//! `seed` and `method`. Keys absent from the file take the profile's values;
//! unknown keys are rejected. The resolved seed (from `--seed`, then
//! `CMCSS_SEED`, then the file) replaces the seed of every section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{generate_synthetic_cohort, load_cohort, save_cohort, stratified_holdout, Cohort, CohortConfig};
use crate::error::{Error, Result, Violations};
use crate::eval::{
    ablate_lambda, ablate_loss_components, ablate_modality, baseline_concat, cross_validate, export_embeddings,
    HarnessConfig, Method, MethodConfig, ModalityAblation, DEFAULT_LAMBDA_GRID,
};
use crate::nn::EncoderParams;
use crate::rng::derive_seed;
use crate::train::{finetune, pretrain, TrainConfig, TrainedModel};

pub const SEED_ENV: &str = "CMCSS_SEED";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const REPORT_FILE: &str = "report.json";
pub const PRETRAINED_FILE: &str = "pretrained.json";
pub const FINETUNED_FILE: &str = "finetuned.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Reduced dimensions, 200/100 epochs, 5 folds × 3 repeats.
    #[default]
    Desk,
    /// Published dimensions, 2000/500 epochs, 10 folds × 50 repeats.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Lambda,
    Losses,
    ModalityDrop,
    ModalityOnly,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub which: AblationKind,
    pub lambda_grid: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            which: AblationKind::Lambda,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }
}

/// Relative paths are taken relative to the configuration file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub cohort_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Input of `finetune`; `<output_dir>/pretrained.json` when absent.
    pub pretrained: Option<PathBuf>,
    /// Input of `export-embeddings`; `<output_dir>/finetuned.json` when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            cohort_dir: "cohort".into(),
            output_dir: "out".into(),
            pretrained: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Method run by `evaluate`.
    pub method: Method,
    pub cohort: CohortConfig,
    pub train: TrainConfig,
    pub harness: HarnessConfig,
    pub ablation: AblationSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (cohort, train, harness) = match profile {
            Profile::Desk => (CohortConfig::desk(), TrainConfig::desk(), HarnessConfig::desk()),
            Profile::Paper => (CohortConfig::default(), TrainConfig::default(), HarnessConfig::default()),
        };
        RunConfig {
            profile,
            seed: 0,
            method: Method::Contrastive,
            cohort,
            train,
            harness,
            ablation: AblationSection::default(),
            paths: PathsSection::default(),
        }
    }

    /// Every violated bound across all sections, keyed by its dotted path.
    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::default();
        v.extend(self.cohort.violations().prefixed("cohort"));
        v.extend(self.train.violations().prefixed("train"));
        v.extend(self.harness.violations().prefixed("harness"));
        v.check(
            !self.ablation.lambda_grid.is_empty(),
            "ablation.lambda_grid",
            "must not be empty",
        );
        v.check(
            self.ablation.lambda_grid.iter().all(|l| l.is_finite() && *l >= 0.0),
            "ablation.lambda_grid",
            "entries must be finite and >= 0",
        );
        v.into_result()
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.cohort.seed = seed;
        self.train.seed = seed;
        self.harness.seed = seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.cohort_dir);
        join(&mut self.paths.output_dir);
        if let Some(p) = self.paths.pretrained.as_mut() {
            join(p);
        }
        if let Some(p) = self.paths.checkpoint.as_mut() {
            join(p);
        }
    }
}

/// Overrides coming from the command line and the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    /// Raw value of `CMCSS_SEED`.
    pub env_seed: Option<String>,
}

impl Overrides {
    pub fn with_env(mut self) -> Self {
        self.env_seed = std::env::var(SEED_ENV).ok();
        self
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses configuration JSON on top of the profile defaults and applies the
/// overrides. `base_dir` anchors relative paths.
pub fn resolve_config_str(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let user: Value = serde_json::from_str(text)?;
    if !user.is_object() {
        return Err(Error::Config(vec![crate::error::ConfigViolation::new(
            "<root>",
            "the configuration must be a JSON object",
        )]));
    }
    let file_profile = match user.get("profile") {
        Some(p) => Some(serde_json::from_value::<Profile>(p.clone()).map_err(|e| {
            Error::Config(vec![crate::error::ConfigViolation::new("profile", e.to_string())])
        })?),
        None => None,
    };
    let profile = overrides.profile.or(file_profile).unwrap_or_default();

    let mut merged = serde_json::to_value(RunConfig::for_profile(profile))?;
    merge(&mut merged, user);
    merged["profile"] = serde_json::to_value(profile)?;
    let mut config: RunConfig = serde_json::from_value(merged)
        .map_err(|e| Error::Config(vec![crate::error::ConfigViolation::new("<schema>", e.to_string())]))?;

    let env_seed = match &overrides.env_seed {
        Some(raw) => Some(raw.trim().parse::<u64>().map_err(|_| {
            Error::Config(vec![crate::error::ConfigViolation::new(
                SEED_ENV,
                format!("{raw:?} is not a non-negative integer"),
            )])
        })?),
        None => None,
    };
    let seed = overrides.seed.or(env_seed).unwrap_or(config.seed);
    config.set_seed(seed);
    config.resolve_paths(base_dir);
    config.validate()?;
    Ok(config)
}

pub fn resolve_config(path: impl AsRef<Path>, overrides: &Overrides) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_config_str(&text, base, overrides)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Pretrain,
    Finetune,
    Evaluate,
    Ablate,
    ExportEmbeddings,
}

fn write_resolved(config: &RunConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn load(config: &RunConfig) -> Result<Cohort> {
    load_cohort(&config.paths.cohort_dir)
}

/// Runs one command and returns the files it wrote.
pub fn run_command(command: Command, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = &config.paths.output_dir;
    match command {
        Command::GenData => {
            let cohort = generate_synthetic_cohort(&config.cohort)?;
            let manifest = save_cohort(&cohort, &config.paths.cohort_dir)?;
            Ok(vec![write_resolved(config, &config.paths.cohort_dir)?, manifest])
        }
        Command::Pretrain => {
            let cohort = load(config)?;
            let mut files = vec![write_resolved(config, out)?];
            let model = pretrain(&cohort, &config.train)?;
            let ckpt = out.join(PRETRAINED_FILE);
            model.params.save(&ckpt)?;
            let log = out.join("pretrain_log.jsonl");
            model.write_log(&log)?;
            files.extend([ckpt, log]);
            Ok(files)
        }
        Command::Finetune => {
            let cohort = load(config)?;
            let mut files = vec![write_resolved(config, out)?];
            let source = config.paths.pretrained.clone().unwrap_or_else(|| out.join(PRETRAINED_FILE));
            let params = EncoderParams::load(&source)?;
            let labels = cohort.labels();
            let (train_idx, val_idx) = stratified_holdout(
                &labels,
                config.harness.inner_val_fraction,
                derive_seed(config.seed, "finetune-holdout", &[]),
            );
            let model = finetune(
                &TrainedModel::untrained(params),
                &cohort.subset(&train_idx),
                &cohort.subset(&val_idx),
                &config.train,
            )?;
            let ckpt = out.join(FINETUNED_FILE);
            model.params.save(&ckpt)?;
            let log = out.join("finetune_log.jsonl");
            model.write_log(&log)?;
            files.extend([ckpt, log]);
            Ok(files)
        }
        Command::Evaluate => {
            let cohort = load(config)?;
            let mut files = vec![write_resolved(config, out)?];
            let method = match config.method {
                Method::Contrastive => MethodConfig::contrastive("joint", config.train.clone()),
                Method::BaselineConcat => MethodConfig::baseline(config.train.clone()),
            };
            let report = cross_validate(&cohort, &config.harness, &method)?;
            files.push(write_file(out.join(REPORT_FILE), &report.to_json()?)?);
            Ok(files)
        }
        Command::Ablate => {
            let cohort = load(config)?;
            let mut files = vec![write_resolved(config, out)?];
            let (h, t) = (&config.harness, &config.train);
            let table = match config.ablation.which {
                AblationKind::Lambda => ablate_lambda(&cohort, &config.ablation.lambda_grid, h, t)?,
                AblationKind::Losses => ablate_loss_components(&cohort, h, t)?,
                AblationKind::ModalityDrop => ablate_modality(&cohort, ModalityAblation::DropOne, h, t)?,
                AblationKind::ModalityOnly => ablate_modality(&cohort, ModalityAblation::OnlyOne, h, t)?,
                AblationKind::Baseline => {
                    let report = baseline_concat(&cohort, h, t)?;
                    files.push(write_file(out.join("baseline_concat.json"), &report.to_json()?)?);
                    return Ok(files);
                }
            };
            files.extend(table.write(out)?);
            Ok(files)
        }
        Command::ExportEmbeddings => {
            let cohort = load(config)?;
            let mut files = vec![write_resolved(config, out)?];
            let source = config.paths.checkpoint.clone().unwrap_or_else(|| out.join(FINETUNED_FILE));
            let params = EncoderParams::load(&source)?;
            let path = out.join(EMBEDDINGS_FILE);
            export_embeddings(&params, &cohort, config.train.modalities, &path)?;
            files.push(path);
            Ok(files)
        }
    }
}

/// Machine-readable error document written to stderr by the binary.
pub fn error_json(err: &Error) -> Value {
    let mut doc = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    });
    if let Error::Config(violations) = err {
        doc["violations"] = serde_json::to_value(violations).unwrap_or(Value::Null);
    }
    doc
}

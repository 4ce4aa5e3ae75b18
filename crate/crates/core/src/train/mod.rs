//! Contrastive pretraining of the five encoders, supervised fine-tuning of the
//! fused classifier, and the shared gradient evaluation.

mod optim;
mod sampler;

pub use optim::{AdamConfig, AdamW};
pub use sampler::stratified_batches;

use std::io::Write as _;
use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, SubjectRecord};
use crate::error::{Error, Result, Violations};
use crate::losses::{
    contrastive_loss_and_grad, inverse_frequency_weights, weighted_cross_entropy_batch, BatchView,
    ContrastiveTerms, LossValue,
};
use crate::modality::{ModalityKind, ModalitySet};
use crate::nn::{backward_batch, encode_batch, fusion_probabilities, EncoderParams, ModelConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub tau: f64,
    pub seed: u64,
    /// Contrastive terms used during pretraining.
    pub terms: ContrastiveTerms,
    /// Modalities fed to the encoders, losses and fusion head.
    pub modalities: ModalitySet,
    pub denominator_includes_positive: bool,
    /// Fine-tuning class weights; inverse training-class frequency when absent.
    pub class_weights: Option<[f64; 2]>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    /// Published settings: batch 32, 2000 pretraining and 500 fine-tuning
    /// epochs, Adam at 1e-3 with weight decay 1e-3, λ = τ = 1.
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            pretrain_epochs: 2000,
            finetune_epochs: 500,
            learning_rate: 0.001,
            weight_decay: 0.001,
            lambda: 1.0,
            tau: 1.0,
            seed: 0,
            terms: ContrastiveTerms::Joint,
            modalities: ModalitySet::all(),
            denominator_includes_positive: false,
            class_weights: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale epochs (200 / 100).
    pub fn desk() -> Self {
        TrainConfig {
            pretrain_epochs: 200,
            finetune_epochs: 100,
            ..TrainConfig::default()
        }
    }

    pub(crate) fn violations(&self) -> Violations {
        let mut v = Violations::default();
        v.check(self.batch_size >= 2, "batch_size", "must be at least 2");
        v.check(
            self.learning_rate.is_finite() && self.learning_rate >= 0.0,
            "learning_rate",
            "must be finite and >= 0",
        );
        v.check(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            "weight_decay",
            "must be finite and >= 0",
        );
        v.check(self.lambda.is_finite() && self.lambda >= 0.0, "lambda", "must be finite and >= 0");
        v.check(self.tau.is_finite() && self.tau > 0.0, "tau", "must be finite and > 0");
        if let Some(w) = self.class_weights {
            v.check(
                w.iter().all(|x| x.is_finite() && *x >= 0.0),
                "class_weights",
                "must be finite and >= 0",
            );
        }
        v.check(
            self.terms == ContrastiveTerms::CssOnly || self.modalities.len() >= 2,
            "terms",
            "the CMC loss needs at least 2 modalities; use css_only for a single modality",
        );
        v.extend(self.model.violations().prefixed("model"));
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.violations().into_result()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.weight_decay)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cmc: Option<f64>,
    pub loss_css: Option<f64>,
    pub loss_ce: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: EncoderParams,
    pub history: Vec<EpochRecord>,
    /// Fine-tuning epoch with the lowest validation loss (1-based).
    pub best_epoch: Option<usize>,
    /// Batches in which no subject had a same-label partner.
    pub degenerate_css_batches: usize,
}

impl TrainedModel {
    pub fn untrained(params: EncoderParams) -> Self {
        TrainedModel {
            params,
            history: Vec::new(),
            best_epoch: None,
            degenerate_css_batches: 0,
        }
    }

    /// Writes the history as one JSON object per line.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for rec in &self.history {
            serde_json::to_writer(&mut out, rec)?;
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// What `compute_gradients` differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Contrastive pretraining objective `λ · cmc + css` (or one of its terms).
    Contrastive {
        lambda: f64,
        tau: f64,
        terms: ContrastiveTerms,
        denominator_includes_positive: bool,
    },
    /// Batch-mean weighted cross-entropy of the fused classifier.
    WeightedCe { class_weights: [f64; 2] },
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// Contrastive components, when the objective is contrastive.
    pub components: Option<LossValue>,
    pub grads: EncoderParams,
}

/// Exact reverse-mode gradients of `objective` on a batch of records.
pub fn compute_gradients(
    params: &EncoderParams,
    records: &[&SubjectRecord],
    modalities: ModalitySet,
    objective: Objective,
) -> Result<Gradients> {
    let (emb, cache) = encode_batch(params, records, modalities)?;
    let mut grads = params.zeros_like();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let (loss, components, d_embed) = match objective {
        Objective::Contrastive {
            lambda,
            tau,
            terms,
            denominator_includes_positive,
        } => {
            let mut batch = BatchView::new(&emb, labels, modalities).with_tau(tau);
            batch.denominator_includes_positive = denominator_includes_positive;
            let (value, d_embed) = contrastive_loss_and_grad(&batch, lambda, terms)?;
            (value.total, Some(value), d_embed)
        }
        Objective::WeightedCe { class_weights } => {
            let e = params.model.embedding_dim;
            let x = emb.fusion_input(e);
            let probs = fusion_probabilities(params, x.view());
            let (loss, d_logits) = weighted_cross_entropy_batch(&probs, &labels, class_weights)?;
            let d_x = params.fusion_fc.backward(x.view(), &d_logits, &mut grads.fusion_fc);
            let mut d_embed: [Option<Array2<f64>>; ModalityKind::COUNT] = Default::default();
            for kind in modalities.iter() {
                let start = kind.index() * e;
                d_embed[kind.index()] = Some(d_x.slice(s![.., start..start + e]).to_owned());
            }
            (loss, None, d_embed)
        }
    };
    if !loss.is_finite() {
        return Err(Error::numeric("compute_gradients", format!("non-finite loss {loss}")));
    }
    backward_batch(params, records, &cache, &d_embed, &mut grads);
    if let Some(path) = grads.first_non_finite() {
        return Err(Error::numeric(format!("gradient {path}"), "non-finite value"));
    }
    Ok(Gradients {
        loss,
        components,
        grads,
    })
}

fn require_both_classes(cohort: &Cohort, min: usize, what: &str) -> Result<()> {
    let counts = cohort.class_counts();
    if counts.iter().any(|&c| c < min) {
        return Err(Error::Contract(format!(
            "{what} needs at least {min} subjects per class, found {counts:?}"
        )));
    }
    Ok(())
}

/// Fresh parameters for a cohort, seeded from the training seed.
pub fn initial_params(cohort: &Cohort, config: &TrainConfig) -> Result<EncoderParams> {
    EncoderParams::init(cohort.dims, &config.model, derive_seed(config.seed, "params", &[]))
}

/// Contrastive pretraining from freshly initialized parameters.
pub fn pretrain(train: &Cohort, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let params = initial_params(train, config)?;
    pretrain_from(params, train, config)
}

/// Contrastive pretraining starting at `params`. The final-epoch parameters
/// are returned; there is no validation-based selection at this stage.
pub fn pretrain_from(mut params: EncoderParams, train: &Cohort, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if config.pretrain_epochs > 0 {
        require_both_classes(train, 2, "pretraining")?;
    }
    let objective = Objective::Contrastive {
        lambda: config.lambda,
        tau: config.tau,
        terms: config.terms,
        denominator_includes_positive: config.denominator_includes_positive,
    };
    let labels = train.labels();
    let mut opt = AdamW::new(config.adam(), &params);
    let mut history = Vec::with_capacity(config.pretrain_epochs);
    let mut degenerate = 0;

    for epoch in 1..=config.pretrain_epochs {
        let mut rng = seeded(derive_seed(config.seed, "pretrain-epoch", &[epoch as u64]));
        let batches = stratified_batches(&labels, config.batch_size, &mut rng);
        let (mut total, mut cmc, mut css) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let records: Vec<&SubjectRecord> = batch.iter().map(|&i| &train.subjects[i]).collect();
            let g = compute_gradients(&params, &records, config.modalities, objective).map_err(|e| {
                diverged_or(e, Stage::Pretrain, epoch, &params)
            })?;
            let parts = g.components.expect("contrastive objective");
            if parts.css_degenerate {
                degenerate += 1;
            }
            total += parts.total;
            cmc += parts.cmc;
            css += parts.css;
            opt.step(&mut params, &g.grads);
        }
        let n = batches.len() as f64;
        history.push(EpochRecord {
            stage: Stage::Pretrain,
            epoch,
            loss_total: total / n,
            loss_cmc: Some(cmc / n),
            loss_css: Some(css / n),
            loss_ce: None,
            val_loss: None,
        });
    }
    Ok(TrainedModel {
        params,
        history,
        best_epoch: None,
        degenerate_css_batches: degenerate,
    })
}

fn diverged_or(err: Error, stage: Stage, epoch: usize, params: &EncoderParams) -> Error {
    match err {
        Error::Numeric { .. } => Error::Diverged {
            stage: stage.name().into(),
            epoch,
            last_good: Box::new(params.clone()),
        },
        other => other,
    }
}

/// Supervised fine-tuning of all parameters (encoders and a fresh fusion
/// head) with weighted cross-entropy. Returns the parameters of the epoch
/// with the lowest validation loss.
pub fn finetune(pretrained: &TrainedModel, train: &Cohort, val: &Cohort, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if val.is_empty() {
        return Err(Error::Contract("fine-tuning needs a non-empty validation split".into()));
    }
    if train.is_empty() {
        return Err(Error::Contract("fine-tuning needs a non-empty training split".into()));
    }
    let mut params = pretrained.params.clone();
    params.reinit_fusion(derive_seed(config.seed, "finetune-head", &[]));
    let labels = train.labels();
    let class_weights = config.class_weights.unwrap_or_else(|| inverse_frequency_weights(&labels));
    let objective = Objective::WeightedCe { class_weights };

    let mut opt = AdamW::new(config.adam(), &params);
    let mut history = Vec::with_capacity(config.finetune_epochs);
    let mut best: Option<(usize, f64, EncoderParams)> = None;

    for epoch in 1..=config.finetune_epochs {
        let mut rng = seeded(derive_seed(config.seed, "finetune-epoch", &[epoch as u64]));
        let batches = stratified_batches(&labels, config.batch_size, &mut rng);
        let mut ce = 0.0;
        for batch in &batches {
            let records: Vec<&SubjectRecord> = batch.iter().map(|&i| &train.subjects[i]).collect();
            let g = compute_gradients(&params, &records, config.modalities, objective)
                .map_err(|e| diverged_or(e, Stage::Finetune, epoch, &params))?;
            ce += g.loss;
            opt.step(&mut params, &g.grads);
        }
        let ce = ce / batches.len() as f64;
        let val_loss = validation_loss(&params, val, config.modalities, class_weights)
            .map_err(|e| diverged_or(e, Stage::Finetune, epoch, &params))?;
        history.push(EpochRecord {
            stage: Stage::Finetune,
            epoch,
            loss_total: ce,
            loss_cmc: None,
            loss_css: None,
            loss_ce: Some(ce),
            val_loss: Some(val_loss),
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, params.clone()));
        }
    }

    let (best_epoch, params) = match best {
        Some((epoch, _, p)) => (Some(epoch), p),
        None => (None, params),
    };
    Ok(TrainedModel {
        params,
        history,
        best_epoch,
        degenerate_css_batches: pretrained.degenerate_css_batches,
    })
}

/// Mean weighted cross-entropy over a cohort.
pub fn validation_loss(
    params: &EncoderParams,
    cohort: &Cohort,
    modalities: ModalitySet,
    class_weights: [f64; 2],
) -> Result<f64> {
    let probs = predict_probabilities(params, cohort, modalities)?;
    let (loss, _) = weighted_cross_entropy_batch(&probs, &cohort.labels(), class_weights)?;
    if !loss.is_finite() {
        return Err(Error::numeric("validation loss", format!("non-finite value {loss}")));
    }
    Ok(loss)
}

const EVAL_CHUNK: usize = 64;

/// `n × 2` class probabilities for every subject of a cohort.
pub fn predict_probabilities(params: &EncoderParams, cohort: &Cohort, modalities: ModalitySet) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((cohort.len(), 2));
    let e = params.model.embedding_dim;
    for (c, chunk) in cohort.subjects.chunks(EVAL_CHUNK).enumerate() {
        let records: Vec<&SubjectRecord> = chunk.iter().collect();
        let (emb, _) = encode_batch(params, &records, modalities)?;
        let probs = fusion_probabilities(params, emb.fusion_input(e).view());
        let start = c * EVAL_CHUNK;
        out.slice_mut(s![start..start + chunk.len(), ..]).assign(&probs);
    }
    Ok(out)
}

/// Positive-class (high-risk) probability per subject.
pub fn predict_scores(params: &EncoderParams, cohort: &Cohort, modalities: ModalitySet) -> Result<Vec<f64>> {
    Ok(predict_probabilities(params, cohort, modalities)?.column(1).to_vec())
}

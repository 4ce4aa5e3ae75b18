//! Cross-modality-complementary (CMC) and cross-subject-similarity (CSS)
//! contrastive losses, their weighted sum, and the weighted cross-entropy used
//! for fine-tuning.
//!
//! Everything is built on the pair kernel
//!
//! ```text
//! S(i, j) = Σ_{(u, v) ∈ pairs} exp(f_u(i) · f_v(j) / τ)
//! ```
//!
//! where `pairs` are the ordered modality pairs `u ≠ v` of the active modality
//! set. The probabilities are ratios of kernel values whose denominators sum
//! over the batch *excluding* the reference subject, so they are not bounded
//! by one and the CMC loss can be negative. Logs are computed with
//! max-shifted log-sum-exp.
//!
//! Gradients are returned with respect to the embeddings; the encoder backward
//! pass takes it from there.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::modality::{ModalityKind, ModalitySet};
use crate::nn::{BatchEmbeddings, EmbeddingSet};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A sampled batch: per-modality embedding matrices (`m × e`, unit rows) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchView {
    pub per_modality: [Option<Array2<f64>>; ModalityKind::COUNT],
    pub labels: Vec<u8>,
    pub tau: f64,
    pub modalities: ModalitySet,
    /// Adds the reference subject to each probability denominator (InfoNCE form).
    pub denominator_includes_positive: bool,
}

impl BatchView {
    pub fn new(embeddings: &BatchEmbeddings, labels: Vec<u8>, modalities: ModalitySet) -> Self {
        BatchView {
            per_modality: embeddings.per_modality.clone(),
            labels,
            tau: 1.0,
            modalities,
            denominator_includes_positive: false,
        }
    }

    /// Builds a batch from per-subject embedding sets; modalities present in every set are used.
    pub fn from_sets(sets: &[EmbeddingSet], labels: Vec<u8>) -> Result<Self> {
        if sets.len() != labels.len() {
            return Err(Error::shape("BatchView", sets.len(), labels.len()));
        }
        let kinds: Vec<ModalityKind> = ModalityKind::ALL
            .into_iter()
            .filter(|&k| !sets.is_empty() && sets.iter().all(|s| s.get(k).is_some()))
            .collect();
        let modalities = ModalitySet::from_kinds(&kinds)?;
        let mut per_modality: [Option<Array2<f64>>; ModalityKind::COUNT] = Default::default();
        for &k in &kinds {
            let e = sets[0].get(k).expect("present").len();
            let mut m = Array2::zeros((sets.len(), e));
            for (i, s) in sets.iter().enumerate() {
                let v = s.get(k).expect("present");
                if v.len() != e {
                    return Err(Error::shape(format!("BatchView {k}"), e, v.len()));
                }
                m.row_mut(i).assign(v);
            }
            per_modality[k.index()] = Some(m);
        }
        Ok(BatchView {
            per_modality,
            labels,
            tau: 1.0,
            modalities,
            denominator_includes_positive: false,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn embedding(&self, kind: ModalityKind) -> &Array2<f64> {
        self.per_modality[kind.index()]
            .as_ref()
            .expect("active modality has embeddings")
    }

    fn check(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Contract(format!("temperature must be positive, got {}", self.tau)));
        }
        for kind in self.modalities.iter() {
            match &self.per_modality[kind.index()] {
                None => return Err(Error::Contract(format!("no embeddings for active modality {kind}"))),
                Some(m) if m.nrows() != self.len() => {
                    return Err(Error::shape(format!("BatchView {kind}"), self.len(), m.nrows()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Scaled similarities of every active pair and the log kernel matrix.
struct Kernel {
    pairs: Vec<(ModalityKind, ModalityKind)>,
    /// `sims[p][(i, j)] = f_u(i) · f_v(j) / τ` for `pairs[p] = (u, v)`.
    sims: Vec<Array2<f64>>,
    log_s: Array2<f64>,
}

impl Kernel {
    fn new(batch: &BatchView) -> Result<Self> {
        batch.check()?;
        let m = batch.len();
        let pairs = batch.modalities.pairs();
        let sims: Vec<Array2<f64>> = pairs
            .iter()
            .map(|&(u, v)| batch.embedding(u).dot(&batch.embedding(v).t()) / batch.tau)
            .collect();
        let mut log_s = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                log_s[[i, j]] = log_sum_exp(sims.iter().map(|c| c[[i, j]]));
            }
        }
        Ok(Kernel { pairs, sims, log_s })
    }

    /// log Σ_{j ∈ row denominator of i} S(i, j)
    fn log_row_denominator(&self, i: usize, include_self: bool) -> f64 {
        let m = self.log_s.nrows();
        log_sum_exp((0..m).filter(|&j| include_self || j != i).map(|j| self.log_s[[i, j]]))
    }

    /// log Σ_{j ∈ column denominator of k} S(j, k)
    fn log_col_denominator(&self, k: usize, include_self: bool) -> f64 {
        let m = self.log_s.nrows();
        log_sum_exp((0..m).filter(|&j| include_self || j != k).map(|j| self.log_s[[j, k]]))
    }

    /// Chain rule from `∂L/∂log S` to the embeddings.
    fn backward(&self, batch: &BatchView, d_log_s: &Array2<f64>) -> [Option<Array2<f64>>; ModalityKind::COUNT] {
        let mut grads: [Option<Array2<f64>>; ModalityKind::COUNT] = Default::default();
        for kind in batch.modalities.iter() {
            grads[kind.index()] = Some(Array2::zeros(batch.embedding(kind).raw_dim()));
        }
        for (&(u, v), c) in self.pairs.iter().zip(&self.sims) {
            // weight of this pair inside each S(i, j)
            let mut w = c - &self.log_s;
            w.mapv_inplace(f64::exp);
            w *= d_log_s;
            w /= batch.tau;
            let du = w.dot(batch.embedding(v));
            let dv = w.t().dot(batch.embedding(u));
            *grads[u.index()].as_mut().expect("active") += &du;
            *grads[v.index()].as_mut().expect("active") += &dv;
        }
        grads
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_index(batch: &BatchView, i: usize) -> Result<()> {
    if i >= batch.len() {
        return Err(Error::Contract(format!("subject index {i} outside batch of {}", batch.len())));
    }
    Ok(())
}

fn require_pairwise(batch: &BatchView) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::Contract(format!(
            "contrastive terms need at least 2 subjects, batch has {}",
            batch.len()
        )));
    }
    Ok(())
}

fn require_cmc_modalities(batch: &BatchView) -> Result<()> {
    if batch.modalities.len() < 2 {
        return Err(Error::Contract(
            "the CMC loss contrasts modalities against each other and needs at least 2 modalities".into(),
        ));
    }
    Ok(())
}

/// `S(i, j)`: sum over active ordered modality pairs of `exp(f_u(i) · f_v(j) / τ)`.
pub fn modality_pair_kernel(i: usize, j: usize, batch: &BatchView) -> Result<f64> {
    batch.check()?;
    check_index(batch, i)?;
    check_index(batch, j)?;
    Ok(batch
        .modalities
        .pairs()
        .into_iter()
        .map(|(u, v)| (batch.embedding(u).row(i).dot(&batch.embedding(v).row(j)) / batch.tau).exp())
        .sum())
}

/// `p(i | s(i)) = S(i, i) / Σ_{j ≠ i} S(i, j)`.
pub fn cmc_positive_prob(i: usize, batch: &BatchView) -> Result<f64> {
    require_pairwise(batch)?;
    check_index(batch, i)?;
    let k = Kernel::new(batch)?;
    Ok((k.log_s[[i, i]] - k.log_row_denominator(i, batch.denominator_includes_positive)).exp())
}

/// `p(i | s(k)) = S(i, k) / Σ_{j ≠ k} S(j, k)` for `i ≠ k`.
pub fn cmc_negative_prob(i: usize, k: usize, batch: &BatchView) -> Result<f64> {
    require_pairwise(batch)?;
    check_index(batch, i)?;
    check_index(batch, k)?;
    if i == k {
        return Err(Error::Contract("cmc_negative_prob needs i != k".into()));
    }
    let ker = Kernel::new(batch)?;
    Ok((ker.log_s[[i, k]] - ker.log_col_denominator(k, batch.denominator_includes_positive)).exp())
}

/// `p(y(i) = y(g) | s(i), s(g)) = S(i, g) / Σ_{j ≠ i} S(i, j)` for `i ≠ g`.
pub fn css_pair_prob(i: usize, g: usize, batch: &BatchView) -> Result<f64> {
    require_pairwise(batch)?;
    check_index(batch, i)?;
    check_index(batch, g)?;
    if i == g {
        return Err(Error::Contract("css_pair_prob needs i != g".into()));
    }
    let k = Kernel::new(batch)?;
    Ok((k.log_s[[i, g]] - k.log_row_denominator(i, batch.denominator_includes_positive)).exp())
}

/// `−(1/m) (Σ_i log p(i|s(i)) − Σ_i Σ_{k≠i} log p(i|s(k)))`.
pub fn cmc_loss(batch: &BatchView) -> Result<f64> {
    cmc_terms(batch, false).map(|(v, _)| v)
}

fn cmc_terms(batch: &BatchView, with_grad: bool) -> Result<(f64, Option<(Kernel, Array2<f64>)>)> {
    require_pairwise(batch)?;
    require_cmc_modalities(batch)?;
    let ker = Kernel::new(batch)?;
    let m = batch.len();
    let inc = batch.denominator_includes_positive;
    let row_den: Array1<f64> = (0..m).map(|i| ker.log_row_denominator(i, inc)).collect();
    let col_den: Array1<f64> = (0..m).map(|k| ker.log_col_denominator(k, inc)).collect();

    let mut positive = 0.0;
    let mut negative = 0.0;
    for i in 0..m {
        positive += ker.log_s[[i, i]] - row_den[i];
        for k in 0..m {
            if k != i {
                negative += ker.log_s[[i, k]] - col_den[k];
            }
        }
    }
    let mf = m as f64;
    let loss = -(positive - negative) / mf;
    if !with_grad {
        return Ok((loss, None));
    }

    let mut g = Array2::zeros((m, m));
    for i in 0..m {
        // −(1/m) · log p(i|s(i))
        g[[i, i]] -= 1.0 / mf;
        for j in (0..m).filter(|&j| inc || j != i) {
            g[[i, j]] += (ker.log_s[[i, j]] - row_den[i]).exp() / mf;
        }
    }
    for k in 0..m {
        // +(1/m) · Σ_{i≠k} log p(i|s(k))
        for i in (0..m).filter(|&i| i != k) {
            g[[i, k]] += 1.0 / mf;
        }
        let reps = (m - 1) as f64;
        for j in (0..m).filter(|&j| inc || j != k) {
            g[[j, k]] -= reps * (ker.log_s[[j, k]] - col_den[k]).exp() / mf;
        }
    }
    Ok((loss, Some((ker, g))))
}

/// CSS loss with a flag raised when no subject has a same-label partner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CssLoss {
    pub value: f64,
    /// Every `G(i)` was empty; the loss is 0 and carries no signal.
    pub degenerate: bool,
}

/// `−(1/m) Σ_i (1/|G(i)|) Σ_{g ∈ G(i)} log p(y(i) = y(g) | s(i), s(g))`.
///
/// Subjects without a same-label partner contribute 0; `m` is unchanged.
pub fn css_loss(batch: &BatchView) -> Result<CssLoss> {
    css_terms(batch, false).map(|(v, _)| v)
}

fn css_terms(batch: &BatchView, with_grad: bool) -> Result<(CssLoss, Option<(Kernel, Array2<f64>)>)> {
    require_pairwise(batch)?;
    let ker = Kernel::new(batch)?;
    let m = batch.len();
    let mf = m as f64;
    let inc = batch.denominator_includes_positive;
    let mut total = 0.0;
    let mut any_group = false;
    let mut g = with_grad.then(|| Array2::zeros((m, m)));
    for i in 0..m {
        let group: Vec<usize> = (0..m)
            .filter(|&j| j != i && batch.labels[j] == batch.labels[i])
            .collect();
        if group.is_empty() {
            continue;
        }
        any_group = true;
        let den = ker.log_row_denominator(i, inc);
        let size = group.len() as f64;
        let mean_log: f64 = group.iter().map(|&gi| ker.log_s[[i, gi]] - den).sum::<f64>() / size;
        total += mean_log;
        if let Some(g) = g.as_mut() {
            for &gi in &group {
                g[[i, gi]] -= 1.0 / (mf * size);
            }
            for j in (0..m).filter(|&j| inc || j != i) {
                g[[i, j]] += (ker.log_s[[i, j]] - den).exp() / mf;
            }
        }
    }
    let loss = CssLoss {
        value: -total / mf,
        degenerate: !any_group,
    };
    Ok((loss, g.map(|g| (ker, g))))
}

/// Loss components of the joint objective `λ · cmc + css`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub cmc: f64,
    pub css: f64,
    pub lambda: f64,
    /// The CSS term had no same-label pairs in this batch.
    pub css_degenerate: bool,
}

pub fn joint_loss(batch: &BatchView, lambda: f64) -> Result<LossValue> {
    check_lambda(lambda)?;
    let cmc = cmc_loss(batch)?;
    let css = css_loss(batch)?;
    Ok(LossValue {
        total: lambda * cmc + css.value,
        cmc,
        css: css.value,
        lambda,
        css_degenerate: css.degenerate,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Which contrastive terms drive pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveTerms {
    /// `λ · cmc + css`
    #[default]
    Joint,
    /// `λ · cmc` only
    CmcOnly,
    /// `css` only
    CssOnly,
}

/// Objective value and gradient w.r.t. every active embedding matrix.
///
/// A term whose weight is zero (`λ = 0`, or a term switched off) is skipped
/// entirely and reported as 0, except that with `λ = 0` in joint mode the CMC
/// value is still evaluated for logging.
pub fn contrastive_loss_and_grad(
    batch: &BatchView,
    lambda: f64,
    terms: ContrastiveTerms,
) -> Result<(LossValue, [Option<Array2<f64>>; ModalityKind::COUNT])> {
    check_lambda(lambda)?;
    let use_cmc = terms != ContrastiveTerms::CssOnly;
    let use_css = terms != ContrastiveTerms::CmcOnly;

    let mut grads: [Option<Array2<f64>>; ModalityKind::COUNT] = Default::default();
    for kind in batch.modalities.iter() {
        grads[kind.index()] = batch.per_modality[kind.index()]
            .as_ref()
            .map(|e| Array2::zeros(e.raw_dim()));
    }
    let mut add = |ker: &Kernel, g: &Array2<f64>, scale: f64| {
        let part = ker.backward(batch, g);
        for (acc, p) in grads.iter_mut().zip(part) {
            if let (Some(acc), Some(p)) = (acc.as_mut(), p) {
                acc.scaled_add(scale, &p);
            }
        }
    };

    let mut cmc = 0.0;
    if use_cmc {
        let want_grad = lambda != 0.0;
        let (value, kg) = cmc_terms(batch, want_grad)?;
        cmc = value;
        if let Some((ker, g)) = kg {
            add(&ker, &g, lambda);
        }
    }
    let mut css = CssLoss {
        value: 0.0,
        degenerate: false,
    };
    if use_css {
        let (value, kg) = css_terms(batch, true)?;
        css = value;
        if let Some((ker, g)) = kg {
            add(&ker, &g, 1.0);
        }
    }
    let total = if use_cmc { lambda * cmc } else { 0.0 } + css.value;
    Ok((
        LossValue {
            total,
            cmc,
            css: css.value,
            lambda,
            css_degenerate: css.degenerate,
        },
        grads,
    ))
}

/// `−w[label] · ln(max(p[label], 1e-12))` for one subject.
pub fn weighted_cross_entropy(probabilities: [f64; 2], label: u8, class_weights: [f64; 2]) -> Result<f64> {
    if label > 1 {
        return Err(Error::Contract(format!("label {label} is not 0 or 1")));
    }
    let sum = probabilities[0] + probabilities[1];
    if (sum - 1.0).abs() > 1e-6 || probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Contract(format!(
            "probabilities {probabilities:?} do not form a distribution"
        )));
    }
    let l = label as usize;
    Ok(-class_weights[l] * probabilities[l].max(PROB_FLOOR).ln())
}

/// Batch-mean weighted cross-entropy of softmax outputs and its gradient
/// w.r.t. the pre-softmax logits.
pub fn weighted_cross_entropy_batch(
    probabilities: &Array2<f64>,
    labels: &[u8],
    class_weights: [f64; 2],
) -> Result<(f64, Array2<f64>)> {
    let m = labels.len();
    if probabilities.dim() != (m, 2) {
        return Err(Error::shape("weighted_cross_entropy_batch", format!("({m}, 2)"), format!("{:?}", probabilities.dim())));
    }
    let mut loss = 0.0;
    let mut d_logits = probabilities.clone();
    for (i, &y) in labels.iter().enumerate() {
        let p = [probabilities[[i, 0]], probabilities[[i, 1]]];
        loss += weighted_cross_entropy(p, y, class_weights)?;
        let w = class_weights[y as usize];
        d_logits[[i, y as usize]] -= 1.0;
        d_logits.row_mut(i).mapv_inplace(|v| v * w / m as f64);
    }
    Ok((loss / m as f64, d_logits))
}

/// Inverse class frequencies normalized to mean 1. A class absent from
/// `labels` gets weight 0 and the other gets 2 (still mean 1).
pub fn inverse_frequency_weights(labels: &[u8]) -> [f64; 2] {
    let counts = crate::data::class_counts(labels.iter().copied());
    let inv = counts.map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 });
    let mean = (inv[0] + inv[1]) / 2.0;
    if mean == 0.0 {
        return [1.0, 1.0];
    }
    inv.map(|w| w / mean)
}

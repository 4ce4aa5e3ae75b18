//! Forward and backward passes from subject records to unit-norm embeddings
//! and class probabilities.
//!
//! Matrix modalities: self-attention → reduce_fc → row-major flatten → MLP →
//! project → L2. Image volume: strided conv stack → fc → project → L2.
//! Clinical: fc → project → L2. Batched evaluation stacks subjects so that
//! every dense layer runs as one matrix product.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::layers::{Activation, AttentionCache, Linear, Spatial};
use super::params::{volume_spatial_sizes, EncoderParams};
use crate::data::SubjectRecord;
use crate::error::{Error, Result};
use crate::modality::{ModalityKind, ModalitySet};

/// Norms below this cannot be normalized.
pub const NORM_EPS: f64 = 1e-12;

/// The unit-norm embeddings of one subject; absent entries belong to
/// modalities excluded from the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: [Option<Array1<f64>>; ModalityKind::COUNT],
}

impl EmbeddingSet {
    pub fn new(vectors: [Option<Array1<f64>>; ModalityKind::COUNT]) -> Self {
        EmbeddingSet { vectors }
    }

    pub fn get(&self, kind: ModalityKind) -> Option<&Array1<f64>> {
        self.vectors[kind.index()].as_ref()
    }

    pub fn modalities(&self) -> impl Iterator<Item = ModalityKind> + '_ {
        ModalityKind::ALL.into_iter().filter(|k| self.vectors[k.index()].is_some())
    }

    /// Fusion input: embeddings in fixed modality order, zeros for absent ones.
    pub fn concat(&self, embedding_dim: usize) -> Array1<f64> {
        let mut out = Array1::zeros(ModalityKind::COUNT * embedding_dim);
        for kind in ModalityKind::ALL {
            if let Some(v) = self.get(kind) {
                let start = kind.index() * embedding_dim;
                out.slice_mut(s![start..start + embedding_dim]).assign(v);
            }
        }
        out
    }
}

/// Embeddings of a batch, one `m × embedding_dim` matrix per present modality.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub per_modality: [Option<Array2<f64>>; ModalityKind::COUNT],
    pub len: usize,
}

impl BatchEmbeddings {
    pub fn get(&self, kind: ModalityKind) -> Option<&Array2<f64>> {
        self.per_modality[kind.index()].as_ref()
    }

    pub fn subject(&self, i: usize) -> EmbeddingSet {
        EmbeddingSet::new(std::array::from_fn(|k| {
            self.per_modality[k].as_ref().map(|m| m.row(i).to_owned())
        }))
    }

    /// `m × (5·embedding_dim)` fusion input with zero blocks for absent modalities.
    pub fn fusion_input(&self, embedding_dim: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.len, ModalityKind::COUNT * embedding_dim));
        for kind in ModalityKind::ALL {
            if let Some(m) = self.get(kind) {
                let start = kind.index() * embedding_dim;
                out.slice_mut(s![.., start..start + embedding_dim]).assign(m);
            }
        }
        out
    }
}

/// `v / ‖v‖₂`; errors on near-zero or non-finite input instead of returning NaN.
pub fn l2_normalize(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !norm.is_finite() {
        return Err(Error::numeric("l2_normalize", "non-finite input"));
    }
    if norm <= NORM_EPS {
        return Err(Error::numeric("l2_normalize", format!("norm {norm:e} is too small")));
    }
    Ok(&v / norm)
}

/// Scaled dot-product self-attention of a `rows × width` input.
pub fn self_attention(x: ArrayView2<f64>, params: &super::AttentionParams) -> Result<Array2<f64>> {
    Ok(params.forward(x)?.output)
}

pub fn encode_subject(record: &SubjectRecord, params: &EncoderParams) -> Result<EmbeddingSet> {
    encode_subject_with(record, params, ModalitySet::all())
}

pub fn encode_subject_with(
    record: &SubjectRecord,
    params: &EncoderParams,
    modalities: ModalitySet,
) -> Result<EmbeddingSet> {
    let (emb, _) = encode_batch(params, &[record], modalities)?;
    Ok(emb.subject(0))
}

/// Softmax class probabilities `[p(low risk), p(high risk)]` of the fused embeddings.
pub fn fuse_and_classify(embset: &EmbeddingSet, params: &EncoderParams) -> Result<[f64; 2]> {
    let e = params.model.embedding_dim;
    for kind in embset.modalities() {
        let len = embset.get(kind).map_or(0, |v| v.len());
        if len != e {
            return Err(Error::shape(format!("fuse_and_classify {kind}"), e, len));
        }
    }
    let x = embset.concat(e).insert_axis(Axis(0));
    let p = fusion_probabilities(params, x.view());
    Ok([p[[0, 0]], p[[0, 1]]])
}

/// Row-wise softmax of `x · fusion_fc`.
pub fn fusion_probabilities(params: &EncoderParams, fusion_input: ArrayView2<f64>) -> Array2<f64> {
    let mut logits = params.fusion_fc.forward(fusion_input);
    super::layers::softmax_rows(&mut logits);
    logits
}

/// Cached activations of a dense chain; `inputs[i]` feeds layer `i`.
#[derive(Debug, Clone)]
struct DenseCache {
    inputs: Vec<Array2<f64>>,
    norms: Array1<f64>,
    embeddings: Array2<f64>,
}

fn dense_forward(
    hidden: &[&Linear],
    project: &Linear,
    activation: Activation,
    x: Array2<f64>,
    kind: ModalityKind,
) -> Result<DenseCache> {
    let mut inputs = Vec::with_capacity(hidden.len() + 1);
    let mut h = x;
    for layer in hidden {
        let mut next = layer.forward(h.view());
        activation.apply(&mut next);
        inputs.push(h);
        h = next;
    }
    let projected = project.forward(h.view());
    inputs.push(h);
    let norms = projected.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    for (i, &n) in norms.iter().enumerate() {
        if !n.is_finite() {
            return Err(Error::numeric(
                format!("encoder {kind}"),
                format!("non-finite activation for batch row {i}"),
            ));
        }
        if n <= NORM_EPS {
            return Err(Error::numeric(
                format!("encoder {kind}"),
                format!("embedding norm {n:e} too small to normalize (batch row {i})"),
            ));
        }
    }
    let embeddings = &projected / &norms.view().insert_axis(Axis(1));
    Ok(DenseCache {
        inputs,
        norms,
        embeddings,
    })
}

/// Backward through L2 normalization, projection and hidden layers. Returns
/// the gradient w.r.t. the chain input when `need_input_grad` is set.
fn dense_backward(
    hidden: &[&Linear],
    project: &Linear,
    activation: Activation,
    cache: &DenseCache,
    d_embed: &Array2<f64>,
    grad_hidden: &mut [&mut Linear],
    grad_project: &mut Linear,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    // d z = (d f − f (f · d f)) / ‖z‖
    let f = &cache.embeddings;
    let dots = (f * d_embed).sum_axis(Axis(1)).insert_axis(Axis(1));
    let mut dz = d_embed - &(f * &dots);
    dz /= &cache.norms.view().insert_axis(Axis(1));

    let n = hidden.len();
    let mut dh = project.backward(cache.inputs[n].view(), &dz, grad_project);
    for i in (0..n).rev() {
        activation.backward(&cache.inputs[i + 1], &mut dh);
        if i == 0 && !need_input_grad {
            hidden[i].accumulate(cache.inputs[i].view(), &dh, grad_hidden[i]);
            return None;
        }
        dh = hidden[i].backward(cache.inputs[i].view(), &dh, grad_hidden[i]);
    }
    Some(dh)
}

#[derive(Debug, Clone)]
struct AttentionModalityCache {
    attention: Vec<AttentionCache>,
    /// Attention outputs of all subjects stacked: `(m·d) × width`.
    stacked: Array2<f64>,
    dense: DenseCache,
}

#[derive(Debug, Clone)]
struct VolumeCache {
    /// Per conv layer: stacked patch matrices and stacked activated outputs.
    cols: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    sizes: Vec<Spatial>,
    dense: DenseCache,
}

#[derive(Debug, Clone)]
enum ModalityCache {
    Attention(AttentionModalityCache),
    Volume(VolumeCache),
    Clinical(DenseCache),
}

/// Everything the backward pass needs from a batched forward evaluation.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    per_modality: [Option<ModalityCache>; ModalityKind::COUNT],
}

fn attention_input(record: &SubjectRecord, kind: ModalityKind) -> ArrayView2<'_, f64> {
    match kind {
        ModalityKind::Radiomics => record.radiomics.view(),
        ModalityKind::StructuralConnectome => record.structural_connectome.view(),
        ModalityKind::FunctionalConnectome => record.functional_connectome.view(),
        _ => unreachable!("not an attention modality"),
    }
}

/// Image volume `(slices, h, w)` as a position-major map `(h·w) × slices`.
fn volume_input(record: &SubjectRecord) -> Array2<f64> {
    let (c, h, w) = record.image_volume.dim();
    let flat = record
        .image_volume
        .view()
        .into_shape_with_order((c, h * w))
        .expect("standard layout");
    flat.t().as_standard_layout().into_owned()
}

fn check_record(record: &SubjectRecord, params: &EncoderParams) -> Result<()> {
    if record.dims() != params.dims {
        return Err(Error::shape(
            format!("encode subject {}", record.subject_id),
            format!("{:?}", params.dims),
            format!("{:?}", record.dims()),
        ));
    }
    Ok(())
}

/// Encodes a batch of records for the given modalities.
pub fn encode_batch(
    params: &EncoderParams,
    records: &[&SubjectRecord],
    modalities: ModalitySet,
) -> Result<(BatchEmbeddings, EncodeCache)> {
    for r in records {
        check_record(r, params)?;
    }
    let m = records.len();
    let act = params.model.activation;
    let mut per_modality: [Option<Array2<f64>>; ModalityKind::COUNT] = Default::default();
    let mut caches: [Option<ModalityCache>; ModalityKind::COUNT] = Default::default();

    for kind in modalities.iter() {
        let cache = match kind {
            ModalityKind::Radiomics
            | ModalityKind::StructuralConnectome
            | ModalityKind::FunctionalConnectome => {
                let enc = params.attention_encoder(kind).expect("attention modality");
                let d = params.dims.d;
                let width = enc.attention.width();
                let mut attention = Vec::with_capacity(m);
                let mut stacked = Array2::zeros((m * d, width));
                for (i, r) in records.iter().enumerate() {
                    let c = enc.attention.forward(attention_input(r, kind))?;
                    stacked.slice_mut(s![i * d..(i + 1) * d, ..]).assign(&c.output);
                    attention.push(c);
                }
                let reduced = enc.reduce_fc.forward(stacked.view());
                let flat = reduced
                    .into_shape_with_order((m, d * enc.reduce_fc.fan_out()))
                    .expect("contiguous reduce output");
                let hidden: Vec<&Linear> = enc.mlp.iter().collect();
                let dense = dense_forward(&hidden, &enc.project, act, flat, kind)?;
                ModalityCache::Attention(AttentionModalityCache {
                    attention,
                    stacked,
                    dense,
                })
            }
            ModalityKind::ImageVolume => {
                let enc = &params.image_volume;
                let sizes = volume_spatial_sizes(&params.dims, &enc.convs);
                let mut maps: Vec<Array2<f64>> = records.iter().map(|r| volume_input(r)).collect();
                let mut cols_cache = Vec::with_capacity(enc.convs.len());
                let mut outputs = Vec::with_capacity(enc.convs.len());
                for (l, conv) in enc.convs.iter().enumerate() {
                    let out_pos = sizes[l + 1].positions();
                    let kkc = conv.weight.nrows();
                    let mut cols = Array2::zeros((m * out_pos, kkc));
                    for (i, map) in maps.iter().enumerate() {
                        cols.slice_mut(s![i * out_pos..(i + 1) * out_pos, ..])
                            .assign(&conv.im2col(map.view(), sizes[l]));
                    }
                    let mut out = cols.dot(&conv.weight);
                    out += &conv.bias;
                    act.apply(&mut out);
                    maps = (0..m)
                        .map(|i| out.slice(s![i * out_pos..(i + 1) * out_pos, ..]).to_owned())
                        .collect();
                    cols_cache.push(cols);
                    outputs.push(out);
                }
                let last = outputs.last().expect("at least one conv layer");
                let flat = last
                    .clone()
                    .into_shape_with_order((m, last.len() / m.max(1)))
                    .expect("contiguous conv output");
                let dense = dense_forward(&[&enc.fc], &enc.project, act, flat, kind)?;
                ModalityCache::Volume(VolumeCache {
                    cols: cols_cache,
                    outputs,
                    sizes,
                    dense,
                })
            }
            ModalityKind::Clinical => {
                let enc = &params.clinical;
                let mut x = Array2::zeros((m, params.dims.c_dim));
                for (i, r) in records.iter().enumerate() {
                    x.row_mut(i).assign(&r.clinical);
                }
                ModalityCache::Clinical(dense_forward(&[&enc.fc], &enc.project, act, x, kind)?)
            }
        };
        let embeddings = match &cache {
            ModalityCache::Attention(c) => c.dense.embeddings.clone(),
            ModalityCache::Volume(c) => c.dense.embeddings.clone(),
            ModalityCache::Clinical(c) => c.embeddings.clone(),
        };
        per_modality[kind.index()] = Some(embeddings);
        caches[kind.index()] = Some(cache);
    }

    Ok((
        BatchEmbeddings {
            per_modality,
            len: m,
        },
        EncodeCache {
            per_modality: caches,
        },
    ))
}

/// Accumulates encoder gradients given `∂L/∂embedding` per modality (`m × e`).
/// Modalities without an upstream gradient are skipped.
pub fn backward_batch(
    params: &EncoderParams,
    records: &[&SubjectRecord],
    cache: &EncodeCache,
    d_embeddings: &[Option<Array2<f64>>; ModalityKind::COUNT],
    grad: &mut EncoderParams,
) {
    let act = params.model.activation;
    let m = records.len();
    for kind in ModalityKind::ALL {
        let (Some(c), Some(d_embed)) = (&cache.per_modality[kind.index()], &d_embeddings[kind.index()])
        else {
            continue;
        };
        match c {
            ModalityCache::Attention(c) => {
                let enc = params.attention_encoder(kind).expect("attention modality");
                let g = grad.attention_encoder_mut(kind).expect("attention modality");
                let hidden: Vec<&Linear> = enc.mlp.iter().collect();
                let mut g_hidden: Vec<&mut Linear> = g.mlp.iter_mut().collect();
                let d_flat = dense_backward(
                    &hidden,
                    &enc.project,
                    act,
                    &c.dense,
                    d_embed,
                    &mut g_hidden,
                    &mut g.project,
                    true,
                )
                .expect("input gradient requested");
                let d = params.dims.d;
                let d_reduced = d_flat
                    .into_shape_with_order((m * d, enc.reduce_fc.fan_out()))
                    .expect("contiguous");
                let d_stacked = enc.reduce_fc.backward(c.stacked.view(), &d_reduced, &mut g.reduce_fc);
                for (i, r) in records.iter().enumerate() {
                    enc.attention.backward(
                        attention_input(r, kind),
                        &c.attention[i],
                        d_stacked.slice(s![i * d..(i + 1) * d, ..]),
                        &mut g.attention,
                    );
                }
            }
            ModalityCache::Volume(c) => {
                let enc = &params.image_volume;
                let g = &mut grad.image_volume;
                let d_flat = dense_backward(
                    &[&enc.fc],
                    &enc.project,
                    act,
                    &c.dense,
                    d_embed,
                    &mut [&mut g.fc],
                    &mut g.project,
                    true,
                )
                .expect("input gradient requested");
                let last = c.outputs.last().expect("conv layer");
                let mut d_out = d_flat.into_shape_with_order(last.raw_dim()).expect("contiguous");
                for l in (0..enc.convs.len()).rev() {
                    let conv = &enc.convs[l];
                    act.backward(&c.outputs[l], &mut d_out);
                    g.convs[l].weight += &c.cols[l].t().dot(&d_out);
                    g.convs[l].bias += &d_out.sum_axis(Axis(0));
                    if l == 0 {
                        break;
                    }
                    let d_cols = d_out.dot(&conv.weight.t());
                    let out_pos = c.sizes[l + 1].positions();
                    let in_pos = c.sizes[l].positions();
                    let mut d_in = Array2::zeros((m * in_pos, conv.in_channels));
                    for i in 0..m {
                        let block = conv.col2im(d_cols.slice(s![i * out_pos..(i + 1) * out_pos, ..]), c.sizes[l]);
                        d_in.slice_mut(s![i * in_pos..(i + 1) * in_pos, ..]).assign(&block);
                    }
                    d_out = d_in;
                }
            }
            ModalityCache::Clinical(c) => {
                let enc = &params.clinical;
                let g = &mut grad.clinical;
                dense_backward(
                    &[&enc.fc],
                    &enc.project,
                    act,
                    c,
                    d_embed,
                    &mut [&mut g.fc],
                    &mut g.project,
                    false,
                );
            }
        }
    }
}

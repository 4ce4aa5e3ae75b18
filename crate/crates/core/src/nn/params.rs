//! Trainable parameters of the five modality encoders and the fusion head,
//! addressed by dotted paths such as `radiomics.attention.w_q`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, AttentionParams, Conv2d, Linear, Spatial};
use crate::data::CohortDims;
use crate::error::{Error, Result, Violations};
use crate::modality::ModalityKind;
use crate::rng::{derive_seed, seeded};

pub const CHECKPOINT_VERSION: &str = "cmcss-ckpt-v1";

/// Architecture hyperparameters. Defaults follow the published network sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Columns of the per-ROI reduction after attention.
    pub reduce_width: usize,
    /// Hidden widths of the post-attention perceptron; the last one feeds the projection.
    pub mlp_hidden: Vec<usize>,
    /// Width of the image and clinical feature layers.
    pub feature_width: usize,
    pub volume_channels: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 8,
            reduce_width: 10,
            mlp_hidden: vec![256, 128],
            feature_width: 128,
            volume_channels: vec![8, 16, 16],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub(crate) fn violations(&self) -> Violations {
        let mut v = Violations::default();
        v.check(self.embedding_dim >= 1, "embedding_dim", "must be at least 1");
        v.check(self.reduce_width >= 1, "reduce_width", "must be at least 1");
        v.check(
            !self.mlp_hidden.is_empty() && self.mlp_hidden.iter().all(|&h| h >= 1),
            "mlp_hidden",
            "must list at least one positive width",
        );
        v.check(self.feature_width >= 1, "feature_width", "must be at least 1");
        v.check(
            !self.volume_channels.is_empty() && self.volume_channels.iter().all(|&c| c >= 1),
            "volume_channels",
            "must list at least one positive channel count",
        );
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.violations().into_result()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEncoder {
    pub attention: AttentionParams,
    pub reduce_fc: Linear,
    pub mlp: Vec<Linear>,
    pub project: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEncoder {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    pub project: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalEncoder {
    pub fc: Linear,
    pub project: Linear,
}

/// All trainable weights. Also used as the gradient container (same shapes).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub model: ModelConfig,
    pub dims: CohortDims,
    pub radiomics: AttentionEncoder,
    pub structural_connectome: AttentionEncoder,
    pub functional_connectome: AttentionEncoder,
    pub image_volume: VolumeEncoder,
    pub clinical: ClinicalEncoder,
    /// Concatenated embeddings (5 × embedding_dim) → 2 logits.
    pub fusion_fc: Linear,
}

const CONV_KERNEL: usize = 3;
const CONV_STRIDE: usize = 2;
const CONV_PADDING: usize = 1;

impl EncoderParams {
    pub fn init(dims: CohortDims, model: &ModelConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        let attention = |kind: ModalityKind| {
            let mut rng = seeded(derive_seed(seed, "init", &[kind.index() as u64]));
            let width = attention_width(&dims, kind);
            let attention = AttentionParams::init(&mut rng, width);
            let reduce_fc = Linear::init(&mut rng, width, model.reduce_width);
            let mut fan_in = dims.d * model.reduce_width;
            let mlp = model
                .mlp_hidden
                .iter()
                .map(|&h| {
                    let layer = Linear::init(&mut rng, fan_in, h);
                    fan_in = h;
                    layer
                })
                .collect();
            let project = Linear::init(&mut rng, fan_in, model.embedding_dim);
            AttentionEncoder {
                attention,
                reduce_fc,
                mlp,
                project,
            }
        };

        let image_volume = {
            let mut rng = seeded(derive_seed(seed, "init", &[ModalityKind::ImageVolume.index() as u64]));
            let mut in_ch = dims.n_slices;
            let convs: Vec<Conv2d> = model
                .volume_channels
                .iter()
                .map(|&out| {
                    let c = Conv2d::init(&mut rng, in_ch, out, CONV_KERNEL, CONV_STRIDE, CONV_PADDING);
                    in_ch = out;
                    c
                })
                .collect();
            let flat = volume_flat_width(&dims, &convs);
            VolumeEncoder {
                fc: Linear::init(&mut rng, flat, model.feature_width),
                project: Linear::init(&mut rng, model.feature_width, model.embedding_dim),
                convs,
            }
        };

        let clinical = {
            let mut rng = seeded(derive_seed(seed, "init", &[ModalityKind::Clinical.index() as u64]));
            ClinicalEncoder {
                fc: Linear::init(&mut rng, dims.c_dim, model.feature_width),
                project: Linear::init(&mut rng, model.feature_width, model.embedding_dim),
            }
        };

        let mut params = EncoderParams {
            model: model.clone(),
            dims,
            radiomics: attention(ModalityKind::Radiomics),
            structural_connectome: attention(ModalityKind::StructuralConnectome),
            functional_connectome: attention(ModalityKind::FunctionalConnectome),
            image_volume,
            clinical,
            fusion_fc: Linear::zeros(ModalityKind::COUNT * model.embedding_dim, 2),
        };
        params.reinit_fusion(seed);
        Ok(params)
    }

    /// Draws a fresh classifier head.
    pub fn reinit_fusion(&mut self, seed: u64) {
        let mut rng = seeded(derive_seed(seed, "fusion-head", &[]));
        self.fusion_fc = Linear::init(&mut rng, ModalityKind::COUNT * self.model.embedding_dim, 2);
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, values| values.fill(0.0));
        z
    }

    pub fn attention_encoder(&self, kind: ModalityKind) -> Option<&AttentionEncoder> {
        match kind {
            ModalityKind::Radiomics => Some(&self.radiomics),
            ModalityKind::StructuralConnectome => Some(&self.structural_connectome),
            ModalityKind::FunctionalConnectome => Some(&self.functional_connectome),
            _ => None,
        }
    }

    pub fn attention_encoder_mut(&mut self, kind: ModalityKind) -> Option<&mut AttentionEncoder> {
        match kind {
            ModalityKind::Radiomics => Some(&mut self.radiomics),
            ModalityKind::StructuralConnectome => Some(&mut self.structural_connectome),
            ModalityKind::FunctionalConnectome => Some(&mut self.functional_connectome),
            _ => None,
        }
    }

    /// Visits every tensor as (path, shape, row-major values), in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        fn mat(f: &mut dyn FnMut(&str, &[usize], &[f64]), path: &str, w: &Array2<f64>) {
            f(path, w.shape(), w.as_slice().expect("contiguous"));
        }
        fn lin(f: &mut dyn FnMut(&str, &[usize], &[f64]), path: &str, w: &Array2<f64>, b: &Array1<f64>) {
            mat(f, &format!("{path}.weight"), w);
            f(&format!("{path}.bias"), b.shape(), b.as_slice().expect("contiguous"));
        }
        for kind in [
            ModalityKind::Radiomics,
            ModalityKind::StructuralConnectome,
            ModalityKind::FunctionalConnectome,
        ] {
            let enc = self.attention_encoder(kind).expect("attention modality");
            let tag = kind.tag();
            let a = &enc.attention;
            for (name, w) in [("w_q", &a.w_q), ("w_k", &a.w_k), ("w_v", &a.w_v)] {
                mat(f, &format!("{tag}.attention.{name}"), w);
            }
            lin(f, &format!("{tag}.reduce_fc"), &enc.reduce_fc.weight, &enc.reduce_fc.bias);
            for (i, l) in enc.mlp.iter().enumerate() {
                lin(f, &format!("{tag}.mlp.{i}"), &l.weight, &l.bias);
            }
            lin(f, &format!("{tag}.project"), &enc.project.weight, &enc.project.bias);
        }
        let v = &self.image_volume;
        for (i, c) in v.convs.iter().enumerate() {
            lin(f, &format!("image_volume.conv.{i}"), &c.weight, &c.bias);
        }
        lin(f, "image_volume.fc", &v.fc.weight, &v.fc.bias);
        lin(f, "image_volume.project", &v.project.weight, &v.project.bias);
        lin(f, "clinical.fc", &self.clinical.fc.weight, &self.clinical.fc.bias);
        lin(f, "clinical.project", &self.clinical.project.weight, &self.clinical.project.bias);
        lin(f, "fusion_fc", &self.fusion_fc.weight, &self.fusion_fc.bias);
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        fn lin(f: &mut dyn FnMut(&str, &mut [f64]), path: &str, w: &mut Array2<f64>, b: &mut Array1<f64>) {
            f(&format!("{path}.weight"), w.as_slice_mut().expect("contiguous"));
            f(&format!("{path}.bias"), b.as_slice_mut().expect("contiguous"));
        }
        let EncoderParams {
            radiomics,
            structural_connectome,
            functional_connectome,
            image_volume,
            clinical,
            fusion_fc,
            ..
        } = self;
        for (tag, enc) in [
            ("radiomics", radiomics),
            ("structural_connectome", structural_connectome),
            ("functional_connectome", functional_connectome),
        ] {
            let a = &mut enc.attention;
            for (name, w) in [("w_q", &mut a.w_q), ("w_k", &mut a.w_k), ("w_v", &mut a.w_v)] {
                f(&format!("{tag}.attention.{name}"), w.as_slice_mut().expect("contiguous"));
            }
            lin(f, &format!("{tag}.reduce_fc"), &mut enc.reduce_fc.weight, &mut enc.reduce_fc.bias);
            for (i, l) in enc.mlp.iter_mut().enumerate() {
                lin(f, &format!("{tag}.mlp.{i}"), &mut l.weight, &mut l.bias);
            }
            lin(f, &format!("{tag}.project"), &mut enc.project.weight, &mut enc.project.bias);
        }
        for (i, c) in image_volume.convs.iter_mut().enumerate() {
            lin(f, &format!("image_volume.conv.{i}"), &mut c.weight, &mut c.bias);
        }
        lin(f, "image_volume.fc", &mut image_volume.fc.weight, &mut image_volume.fc.bias);
        lin(f, "image_volume.project", &mut image_volume.project.weight, &mut image_volume.project.bias);
        lin(f, "clinical.fc", &mut clinical.fc.weight, &mut clinical.fc.bias);
        lin(f, "clinical.project", &mut clinical.project.weight, &mut clinical.project.bias);
        lin(f, "fusion_fc", &mut fusion_fc.weight, &mut fusion_fc.bias);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    pub fn paths(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |p, _, _| out.push(p.to_string()));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &EncoderParams, scale: f64) {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |_, v| {
            let n = v.len();
            for (a, b) in v.iter_mut().zip(&flat[offset..offset + n]) {
                *a += scale * b;
            }
            offset += n;
        });
    }

    /// First tensor path containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut found = None;
        self.visit(&mut |p, _, v| {
            if found.is_none() && v.iter().any(|x| !x.is_finite()) {
                found = Some(p.to_string());
            }
        });
        found
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = BTreeMap::new();
        self.visit(&mut |p, shape, v| {
            params.insert(
                p.to_string(),
                CheckpointTensor {
                    shape: shape.to_vec(),
                    values: v.to_vec(),
                },
            );
        });
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            dims: self.dims,
            model: self.model.clone(),
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {:?}, expected {CHECKPOINT_VERSION:?}",
                ckpt.version
            )));
        }
        let mut params = EncoderParams::init(ckpt.dims, &ckpt.model, 0)?;
        let mut shapes = BTreeMap::new();
        params.visit(&mut |p, s, _| {
            shapes.insert(p.to_string(), s.to_vec());
        });
        for (path, shape) in &shapes {
            let t = ckpt
                .params
                .get(path)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {path}")))?;
            if &t.shape != shape || t.values.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "tensor {path}: expected shape {shape:?}, found {:?} with {} values",
                    t.shape,
                    t.values.len()
                )));
            }
        }
        if let Some(extra) = ckpt.params.keys().find(|k| !shapes.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        params.visit_mut(&mut |p, v| v.copy_from_slice(&ckpt.params[p].values));
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        EncoderParams::from_checkpoint(&ckpt)
    }
}

/// Input width of a modality's attention matrices.
pub fn attention_width(dims: &CohortDims, kind: ModalityKind) -> usize {
    match kind {
        ModalityKind::Radiomics => dims.z,
        _ => dims.d,
    }
}

pub(crate) fn volume_spatial_sizes(dims: &CohortDims, convs: &[Conv2d]) -> Vec<Spatial> {
    let mut sizes = vec![Spatial {
        h: dims.h,
        w: dims.w,
    }];
    for c in convs {
        let next = c.output_size(*sizes.last().expect("non-empty"));
        sizes.push(next);
    }
    sizes
}

fn volume_flat_width(dims: &CohortDims, convs: &[Conv2d]) -> usize {
    let last = *volume_spatial_sizes(dims, convs).last().expect("non-empty");
    last.positions() * convs.last().map_or(dims.n_slices, Conv2d::out_channels)
}

/// Serialized parameter file: path → shape + row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub dims: CohortDims,
    pub model: ModelConfig,
    pub params: BTreeMap<String, CheckpointTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

//! Modality encoders, fusion head and their parameters.

mod encode;
mod layers;
mod params;

pub use encode::{
    backward_batch, encode_batch, encode_subject, encode_subject_with, fuse_and_classify,
    fusion_probabilities, l2_normalize, self_attention, BatchEmbeddings, EmbeddingSet,
    EncodeCache, NORM_EPS,
};
pub use layers::{softmax_rows, Activation, AttentionCache, AttentionParams, Conv2d, Linear, Spatial};
pub use params::{
    attention_width, AttentionEncoder, Checkpoint, CheckpointTensor, ClinicalEncoder,
    EncoderParams, ModelConfig, VolumeEncoder, CHECKPOINT_VERSION,
};

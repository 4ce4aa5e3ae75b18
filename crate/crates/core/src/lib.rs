//! Joint cross-modality-complementary (CMC) and cross-subject-similarity (CSS)
//! contrastive learning over five-modality subject records.
//!
//! The crate covers the whole pipeline: synthetic cohort generation and
//! persistence ([`data`]), self-attention / convolutional / dense modality
//! encoders ([`nn`]), the contrastive and classification losses with their
//! embedding gradients ([`losses`]), contrastive pretraining followed by
//! fine-tuning ([`train`]), and the repeated stratified cross-validation
//! harness with ablation drivers ([`eval`]). [`cli`] wires JSON run
//! configurations to those operations.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod modality;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use modality::{ModalityKind, ModalitySet};

//! Frequency-aware unsupervised sentence embedding training.
//!
//! This crate trains a small transformer encoder to produce sentence
//! embeddings without labels, combining three objectives:
//!
//! - a contrastive regularizer pulling two augmented views of each sentence
//!   together against in-batch negatives,
//! - adversarial tuning: a token-level discriminator tries to predict
//!   whether a token is high- or low-frequency while the encoder, through a
//!   gradient reversal layer, learns frequency-invariant embeddings,
//! - incomplete sentence filtering: a sentence-level discriminator learns to
//!   tell original sentences from versions with low-frequency tokens masked,
//!   jointly trained so informative rare tokens contribute more to the
//!   sentence embedding.
//!
//! Everything runs on a from-scratch f64 autodiff tape ([`tape::Tape`]) so
//! every gradient path can be checked against finite differences. The crate
//! also ships the surrounding pipeline: corpus ingestion and frequency
//! labeling, deterministic training with checkpoint resume, semantic textual
//! similarity evaluation, and embedding-space diagnostics.

pub mod augment;
pub mod checkpoint;
pub mod diag;
pub mod encoder;
pub mod eval;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use tape::{GradientMap, Primitive, Tape, TensorId};
pub use tensor::{Tensor, TensorError};

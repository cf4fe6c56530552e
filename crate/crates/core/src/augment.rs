//! Sentence augmentation: the two contrastive views per sentence and the
//! incomplete version used by incomplete sentence filtering.
//!
//! All augmentations are pure functions of (input, spec): the same seed
//! always reproduces the same view.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::vocab::{CLS_ID, MASK_ID, PAD_ID, SEP_ID};

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentError {
    /// Rates must lie in [0, 1): an augmentation may not delete everything.
    InvalidRate { rate: f64 },
    /// A token id has no frequency label.
    MissingLabel { token_id: u32 },
}

impl fmt::Display for AugmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentError::InvalidRate { rate } => write!(f, "rate {} outside [0, 1)", rate),
            AugmentError::MissingLabel { token_id } => {
                write!(f, "no frequency label for token id {}", token_id)
            }
        }
    }
}

impl std::error::Error for AugmentError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentStrategy {
    /// Remove floor(rate * n) random content tokens.
    TokenCutoff,
    /// Zero floor(rate * D) embedding dimensions at encode time.
    FeatureCutoff,
    /// Permute the content tokens; `[CLS]`/`[SEP]` stay in place.
    TokenShuffle,
    /// The view is the sentence itself; the encoder's dropout randomness
    /// provides the variation.
    Dropout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub strategy: AugmentStrategy,
    pub rate: f64,
    pub seed: u64,
}

/// One augmented view of a sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub ids: Vec<u32>,
    /// Embedding dimensions the encoder must zero (feature cutoff only).
    pub zeroed_dims: Option<Vec<usize>>,
    /// True when the variation comes from encoder dropout.
    pub uses_encoder_dropout: bool,
    /// Set when a destructive strategy was skipped on a too-short sentence.
    pub too_short: bool,
}

impl AugmentedView {
    fn unchanged(ids: &[u32]) -> Self {
        AugmentedView {
            ids: ids.to_vec(),
            zeroed_dims: None,
            uses_encoder_dropout: false,
            too_short: false,
        }
    }
}

/// Positions that carry words: everything except `[PAD]`, `[CLS]`, `[SEP]`.
pub fn content_positions(ids: &[u32]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &id)| id != PAD_ID && id != CLS_ID && id != SEP_ID)
        .map(|(p, _)| p)
        .collect()
}

/// Applies one augmentation strategy. Deterministic given (ids, spec).
/// `embed_dim` is only consulted by feature cutoff.
pub fn augment(
    ids: &[u32],
    spec: &AugmentSpec,
    embed_dim: usize,
) -> Result<AugmentedView, AugmentError> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(AugmentError::InvalidRate { rate: spec.rate });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let content = content_positions(ids);
    match spec.strategy {
        AugmentStrategy::TokenCutoff => {
            if content.len() < 2 {
                let mut view = AugmentedView::unchanged(ids);
                view.too_short = true;
                return Ok(view);
            }
            let k = (spec.rate * content.len() as f64).floor() as usize;
            if k == 0 {
                return Ok(AugmentedView::unchanged(ids));
            }
            let mut pool = content;
            pool.shuffle(&mut rng);
            let mut removed: Vec<usize> = pool[..k].to_vec();
            removed.sort_unstable();
            let out = ids
                .iter()
                .enumerate()
                .filter(|(p, _)| removed.binary_search(p).is_err())
                .map(|(_, &id)| id)
                .collect();
            Ok(AugmentedView { ids: out, ..AugmentedView::unchanged(ids) })
        }
        AugmentStrategy::TokenShuffle => {
            if content.len() < 2 {
                let mut view = AugmentedView::unchanged(ids);
                view.too_short = true;
                return Ok(view);
            }
            let mut values: Vec<u32> = content.iter().map(|&p| ids[p]).collect();
            values.shuffle(&mut rng);
            let mut out = ids.to_vec();
            for (&p, &v) in content.iter().zip(values.iter()) {
                out[p] = v;
            }
            Ok(AugmentedView { ids: out, ..AugmentedView::unchanged(ids) })
        }
        AugmentStrategy::FeatureCutoff => {
            let k = (spec.rate * embed_dim as f64).floor() as usize;
            let mut dims: Vec<usize> = (0..embed_dim).collect();
            dims.shuffle(&mut rng);
            let mut zeroed: Vec<usize> = dims[..k].to_vec();
            zeroed.sort_unstable();
            Ok(AugmentedView { zeroed_dims: Some(zeroed), ..AugmentedView::unchanged(ids) })
        }
        AugmentStrategy::Dropout => {
            Ok(AugmentedView { uses_encoder_dropout: true, ..AugmentedView::unchanged(ids) })
        }
    }
}

/// How incomplete sentences realize "masking".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskStyle {
    /// Replace masked positions with `[MASK]`, preserving length (default).
    MaskToken,
    /// Remove masked positions outright.
    Delete,
}

/// A sentence paired with its incomplete version: low-frequency positions
/// masked at rate epsilon. The information-discriminator labels are 0 for
/// the original and 1 for the incomplete version.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteSentence {
    pub original: Vec<u32>,
    pub masked: Vec<u32>,
    /// Positions (in the original) that were masked.
    pub mask_positions: Vec<usize>,
    /// False when the sentence has no low-frequency tokens at all; such
    /// pairs skip the incomplete term of the filtering loss.
    pub had_low_frequency: bool,
}

/// Masks each low-frequency content position independently with probability
/// `epsilon`. `labels` is indexed by token id (1 = low frequency).
/// Deterministic given `seed`.
pub fn make_incomplete(
    ids: &[u32],
    labels: &[u8],
    epsilon: f64,
    seed: u64,
    style: MaskStyle,
) -> Result<IncompleteSentence, AugmentError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(AugmentError::InvalidRate { rate: epsilon });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask_positions = Vec::new();
    let mut had_low_frequency = false;
    for p in content_positions(ids) {
        let id = ids[p];
        let label = *labels
            .get(id as usize)
            .ok_or(AugmentError::MissingLabel { token_id: id })?;
        if label == 1 {
            had_low_frequency = true;
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                mask_positions.push(p);
            }
        }
    }
    let masked = match style {
        MaskStyle::MaskToken => {
            let mut out = ids.to_vec();
            for &p in &mask_positions {
                out[p] = MASK_ID;
            }
            out
        }
        MaskStyle::Delete => ids
            .iter()
            .enumerate()
            .filter(|(p, _)| mask_positions.binary_search(p).is_err())
            .map(|(_, &id)| id)
            .collect(),
    };
    Ok(IncompleteSentence { original: ids.to_vec(), masked, mask_positions, had_low_frequency })
}

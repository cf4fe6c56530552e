//! The three training objectives and their discriminators.
//!
//! - `adversarial_loss`: a token-level discriminator predicts each content
//!   token's frequency label from its contextual embedding. The embedding
//!   passes through a gradient reversal layer first, so the discriminator
//!   descends its cross-entropy while the encoder ascends it — the min-max
//!   objective collapses into a single minimization step.
//! - `isf_loss`: a sentence-level discriminator tells original sentence
//!   embeddings (label 0) from incomplete ones (label 1); encoder and
//!   discriminator minimize jointly, no reversal on this path.
//! - `contrastive_loss`: temperature-scaled InfoNCE over cosine
//!   similarities; positives are the two views of the same sentence,
//!   negatives are both views of every other sentence in the batch.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::EncodedBatch;
use crate::rng::derive_seed;
use crate::tape::{Tape, TensorId};
use crate::tensor::{Tensor, TensorError};
use crate::vocab::Vocabulary;

#[derive(Debug)]
pub enum ObjectiveError {
    /// No content tokens anywhere in the batch.
    NoContentTokens,
    /// Index-aligned batches have different sizes.
    BatchMismatch { left: usize, right: usize },
    /// The contrastive loss needs at least two sentences for negatives.
    BatchTooSmall { size: usize },
    InvalidWeights { detail: String },
    /// A token id has no frequency label.
    MissingLabel { token_id: u32 },
    Tensor(TensorError),
}

impl fmt::Display for ObjectiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveError::NoContentTokens => {
                write!(f, "no content tokens available for the adversarial loss")
            }
            ObjectiveError::BatchMismatch { left, right } => {
                write!(f, "batch sizes differ: {} vs {}", left, right)
            }
            ObjectiveError::BatchTooSmall { size } => {
                write!(f, "contrastive loss needs a batch of at least 2, got {}", size)
            }
            ObjectiveError::InvalidWeights { detail } => write!(f, "invalid weights: {}", detail),
            ObjectiveError::MissingLabel { token_id } => {
                write!(f, "no frequency label for token id {}", token_id)
            }
            ObjectiveError::Tensor(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for ObjectiveError {}

impl From<TensorError> for ObjectiveError {
    fn from(e: TensorError) -> Self {
        ObjectiveError::Tensor(e)
    }
}

/// Loss combination weights: alpha scales the adversarial term, beta the
/// filtering term, tau is the contrastive temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Result<Self, ObjectiveError> {
        if alpha < 0.0 || beta < 0.0 {
            return Err(ObjectiveError::InvalidWeights {
                detail: format!("alpha {} and beta {} must be nonnegative", alpha, beta),
            });
        }
        if tau <= 0.0 {
            return Err(ObjectiveError::InvalidWeights {
                detail: format!("temperature {} must be positive", tau),
            });
        }
        Ok(LossWeights { alpha, beta, tau })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, tau: 0.1 }
    }
}

/// Two affine layers with a ReLU between: `input_dim -> hidden -> 2 logits`.
/// One instance serves as the token-level similarity discriminator, another
/// as the sentence-level information discriminator.
#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl DiscriminatorParams {
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xd15c]));
        DiscriminatorParams {
            w1: Tensor::randn(vec![input_dim, hidden_dim], 0.0, 0.02, &mut rng)
                .with_requires_grad(true),
            b1: Tensor::zeros(vec![hidden_dim]).with_requires_grad(true),
            w2: Tensor::randn(vec![hidden_dim, 2], 0.0, 0.02, &mut rng).with_requires_grad(true),
            b2: Tensor::zeros(vec![2]).with_requires_grad(true),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.w1", prefix), &self.w1),
            (format!("{}.b1", prefix), &self.b1),
            (format!("{}.w2", prefix), &self.w2),
            (format!("{}.b2", prefix), &self.b2),
        ]
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.w1", prefix), &mut self.w1),
            (format!("{}.b1", prefix), &mut self.b1),
            (format!("{}.w2", prefix), &mut self.w2),
            (format!("{}.b2", prefix), &mut self.b2),
        ]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> DiscriminatorBinding {
        let put = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.leaf(t.clone().with_requires_grad(false))
            }
        };
        DiscriminatorBinding {
            w1: put(tape, &self.w1),
            b1: put(tape, &self.b1),
            w2: put(tape, &self.w2),
            b2: put(tape, &self.b2),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorBinding {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

impl DiscriminatorBinding {
    pub fn named_ids(&self, prefix: &str) -> Vec<(String, TensorId)> {
        vec![
            (format!("{}.w1", prefix), self.w1),
            (format!("{}.b1", prefix), self.b1),
            (format!("{}.w2", prefix), self.w2),
            (format!("{}.b2", prefix), self.b2),
        ]
    }

    /// `relu(x @ w1 + b1) @ w2 + b2` for a `1 x D` input.
    pub fn logits(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId, TensorError> {
        let pre = tape.matmul(x, self.w1)?;
        let pre = tape.add(pre, self.b1)?;
        let hidden = tape.relu(pre)?;
        let out = tape.matmul(hidden, self.w2)?;
        tape.add(out, self.b2)
    }
}

/// Positions whose tokens carry frequency semantics: special tokens
/// (`[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`, `[MASK]`) are excluded.
fn labeled_positions(tokens: &[u32]) -> impl Iterator<Item = usize> + '_ {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &id)| !Vocabulary::is_special(id))
        .map(|(p, _)| p)
}

/// Token-level adversarial loss: mean over sentences of the per-sentence
/// mean cross-entropy of the similarity discriminator's frequency
/// predictions. Each token embedding passes through the gradient reversal
/// layer (unless `use_grl` is false, which exists for sign checks).
pub fn adversarial_loss(
    tape: &mut Tape,
    batch: &EncodedBatch,
    labels_by_id: &[u8],
    disc: &DiscriminatorBinding,
    use_grl: bool,
) -> Result<TensorId, ObjectiveError> {
    let mut sentence_means = Vec::with_capacity(batch.batch_size());
    for s in 0..batch.batch_size() {
        let tokens = &batch.tokens[s];
        let mut token_losses = Vec::new();
        for p in labeled_positions(tokens) {
            let id = tokens[p];
            let label = *labels_by_id
                .get(id as usize)
                .ok_or(ObjectiveError::MissingLabel { token_id: id })?;
            let emb = tape.slice(batch.h[s], 0, p, 1)?;
            let routed = if use_grl { tape.grl(emb)? } else { emb };
            let logits = disc.logits(tape, routed)?;
            token_losses.push(tape.cross_entropy(logits, label as usize)?);
        }
        if token_losses.is_empty() {
            continue;
        }
        let stacked = tape.concat(&token_losses, 0)?;
        sentence_means.push(tape.mean(stacked)?);
    }
    if sentence_means.is_empty() {
        return Err(ObjectiveError::NoContentTokens);
    }
    let stacked = tape.concat(&sentence_means, 0)?;
    Ok(tape.mean(stacked)?)
}

/// Incomplete sentence filtering loss: mean over sentences of
/// `CE(disc(h_incomplete), 1) + CE(disc(h_original), 0)`. Pairs whose
/// sentence had no low-frequency tokens (`include_incomplete[i] == false`)
/// contribute only the original term.
pub fn isf_loss(
    tape: &mut Tape,
    original: &[TensorId],
    incomplete: &[TensorId],
    include_incomplete: &[bool],
    disc: &DiscriminatorBinding,
) -> Result<TensorId, ObjectiveError> {
    if original.len() != incomplete.len() {
        return Err(ObjectiveError::BatchMismatch {
            left: original.len(),
            right: incomplete.len(),
        });
    }
    if original.len() != include_incomplete.len() {
        return Err(ObjectiveError::BatchMismatch {
            left: original.len(),
            right: include_incomplete.len(),
        });
    }
    if original.is_empty() {
        return Err(ObjectiveError::BatchTooSmall { size: 0 });
    }
    let mut terms = Vec::with_capacity(original.len());
    for i in 0..original.len() {
        let orig_logits = disc.logits(tape, original[i])?;
        let orig_ce = tape.cross_entropy(orig_logits, 0)?;
        let term = if include_incomplete[i] {
            let inc_logits = disc.logits(tape, incomplete[i])?;
            let inc_ce = tape.cross_entropy(inc_logits, 1)?;
            tape.add(inc_ce, orig_ce)?
        } else {
            orig_ce
        };
        terms.push(term);
    }
    let stacked = tape.concat(&terms, 0)?;
    Ok(tape.mean(stacked)?)
}

/// Options for the contrastive regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOptions {
    pub temperature: f64,
    /// The denominator excludes the positive pair by default; setting this
    /// restores the standard formulation that includes it.
    pub denominator_includes_positive: bool,
}

impl Default for ContrastiveOptions {
    fn default() -> Self {
        ContrastiveOptions { temperature: 0.1, denominator_includes_positive: false }
    }
}

/// InfoNCE over cosine similarities: for each sentence, the anchor is its
/// first view; the positive is its second view; the negatives are both views
/// of every other sentence (2B-2 of them).
pub fn contrastive_loss(
    tape: &mut Tape,
    view_a: &[TensorId],
    view_b: &[TensorId],
    opts: &ContrastiveOptions,
) -> Result<TensorId, ObjectiveError> {
    let b = view_a.len();
    if b != view_b.len() {
        return Err(ObjectiveError::BatchMismatch { left: b, right: view_b.len() });
    }
    if b < 2 {
        return Err(ObjectiveError::BatchTooSmall { size: b });
    }
    if opts.temperature <= 0.0 {
        return Err(ObjectiveError::InvalidWeights {
            detail: format!("temperature {} must be positive", opts.temperature),
        });
    }
    let inv_tau = 1.0 / opts.temperature;

    let mut terms = Vec::with_capacity(b);
    for i in 0..b {
        let pos_cos = tape.cosine_similarity(view_a[i], view_b[i])?;
        let pos = tape.scale(pos_cos, inv_tau)?;

        let mut negatives = Vec::with_capacity(2 * b - 2);
        for k in 0..b {
            if k == i {
                continue;
            }
            let na = tape.cosine_similarity(view_a[i], view_a[k])?;
            negatives.push(tape.scale(na, inv_tau)?);
            let nb = tape.cosine_similarity(view_a[i], view_b[k])?;
            negatives.push(tape.scale(nb, inv_tau)?);
        }

        let term = if opts.denominator_includes_positive {
            // -log( e^pos / (e^pos + sum_k e^neg_k) )
            let mut logits = vec![pos];
            logits.extend_from_slice(&negatives);
            let stacked = tape.concat(&logits, 0)?;
            tape.cross_entropy(stacked, 0)?
        } else {
            // -log( e^pos / sum_k e^neg_k ) = lse(negatives) - pos, with
            // lse computed stably as CE(negatives, 0) + negatives[0].
            let stacked = tape.concat(&negatives, 0)?;
            let ce = tape.cross_entropy(stacked, 0)?;
            let lse = tape.add(ce, negatives[0])?;
            tape.sub(lse, pos)?
        };
        terms.push(term);
    }
    let stacked = tape.concat(&terms, 0)?;
    Ok(tape.mean(stacked)?)
}

/// Training phase: during warm-up only the contrastive regularizer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Main,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Warmup => write!(f, "warmup"),
            Phase::Main => write!(f, "main"),
        }
    }
}

/// Loss components of one step; adversarial and filtering terms are absent
/// in warm-up (or when their weight is zero).
#[derive(Debug, Clone, Copy)]
pub struct LossComponents {
    pub adversarial: Option<TensorId>,
    pub isf: Option<TensorId>,
    pub contrastive: TensorId,
}

/// Combines the phase-appropriate total:
/// warm-up -> contrastive only; main -> alpha * L_AT + beta * L_ISF + R.
/// The min-max structure is realized entirely by the gradient reversal
/// inside the adversarial loss, so one minimization step is valid.
pub fn total_loss(
    tape: &mut Tape,
    components: &LossComponents,
    weights: &LossWeights,
    phase: Phase,
) -> Result<TensorId, ObjectiveError> {
    match phase {
        Phase::Warmup => Ok(components.contrastive),
        Phase::Main => {
            let mut total = components.contrastive;
            if let Some(adv) = components.adversarial {
                let weighted = tape.scale(adv, weights.alpha)?;
                total = tape.add(total, weighted)?;
            }
            if let Some(isf) = components.isf {
                let weighted = tape.scale(isf, weights.beta)?;
                total = tape.add(total, weighted)?;
            }
            Ok(total)
        }
    }
}

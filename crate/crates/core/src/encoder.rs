//! Mini transformer encoder producing contextual token embeddings and
//! average-pooled sentence embeddings.
//!
//! Post-norm layers (residual then layer norm), learned positional
//! embeddings, multi-head self-attention with key masking of `[PAD]`, and a
//! ReLU feed-forward block. Sentences are encoded one at a time on the tape;
//! attention never mixes sentences.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::rng::derive_seed;
use crate::tape::{Tape, TensorId};
use crate::tensor::{Tensor, TensorError};
use crate::vocab::{CLS_ID, PAD_ID, SEP_ID};

/// Layer-norm epsilon used throughout the encoder.
pub const LN_EPS: f64 = 1e-12;

/// Additive attention bias for masked keys; underflows to exactly zero
/// weight after softmax.
const MASK_BIAS: f64 = -1e30;

#[derive(Debug)]
pub enum EncodeError {
    SequenceTooLong { sentence: usize, len: usize, max: usize },
    /// A sentence with no pooled (content) tokens cannot be embedded.
    EmptySentence { sentence: usize },
    AttentionNotRetained,
    LayerOutOfRange { layer: usize, layers: usize },
    EmptyBatch,
    Tensor(TensorError),
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeError::SequenceTooLong { sentence, len, max } => {
                write!(f, "sentence {} has {} tokens, exceeding the maximum {}", sentence, len, max)
            }
            EncodeError::EmptySentence { sentence } => {
                write!(f, "sentence {} has no content tokens to pool", sentence)
            }
            EncodeError::AttentionNotRetained => {
                write!(f, "attention weights were not retained at encode time")
            }
            EncodeError::LayerOutOfRange { layer, layers } => {
                write!(f, "layer {} out of range for a {}-layer encoder", layer, layers)
            }
            EncodeError::EmptyBatch => write!(f, "cannot encode an empty batch"),
            EncodeError::Tensor(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for EncodeError {}

impl From<TensorError> for EncodeError {
    fn from(e: TensorError) -> Self {
        EncodeError::Tensor(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: small enough for finite-difference testing,
    /// large enough to train.
    pub fn small(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_len: 64,
            dropout: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        debug_assert_eq!(self.dim % self.heads, 0, "dim must be divisible by head count");
        self.dim / self.heads
    }
}

/// One transformer layer's trainable weights. Projections carry no bias;
/// the layer norms carry scale and shift.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_in: Tensor,
    pub ffn_out: Tensor,
    pub ln1_scale: Tensor,
    pub ln1_shift: Tensor,
    pub ln2_scale: Tensor,
    pub ln2_shift: Tensor,
}

/// All trainable weights of the encoder.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerParams>,
}

const INIT_STD: f64 = 0.02;

impl EncoderParams {
    /// Seeded Gaussian init (std 0.02); layer-norm scales start at 1.
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        assert!(config.dim % config.heads == 0, "dim must be divisible by head count");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x70a7]));
        let d = config.dim;
        let g = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            Tensor::randn(shape, 0.0, INIT_STD, rng).with_requires_grad(true)
        };
        let token_embedding = g(vec![config.vocab_size, d], &mut rng);
        let position_embedding = g(vec![config.max_len, d], &mut rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: g(vec![d, d], &mut rng),
                wk: g(vec![d, d], &mut rng),
                wv: g(vec![d, d], &mut rng),
                wo: g(vec![d, d], &mut rng),
                ffn_in: g(vec![d, config.ffn_dim], &mut rng),
                ffn_out: g(vec![config.ffn_dim, d], &mut rng),
                ln1_scale: Tensor::new(vec![d], vec![1.0; d]).unwrap().with_requires_grad(true),
                ln1_shift: Tensor::zeros(vec![d]).with_requires_grad(true),
                ln2_scale: Tensor::new(vec![d], vec![1.0; d]).unwrap().with_requires_grad(true),
                ln2_shift: Tensor::zeros(vec![d]).with_requires_grad(true),
            })
            .collect();
        EncoderParams { config, token_embedding, position_embedding, layers }
    }

    /// Stable (name, tensor) listing used by the optimizer and checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("encoder.token_embedding".to_string(), &self.token_embedding),
            ("encoder.position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (field, t) in layer_fields(layer) {
                out.push((format!("encoder.layer{}.{}", i, field), t));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("encoder.token_embedding".to_string(), &mut self.token_embedding),
            ("encoder.position_embedding".to_string(), &mut self.position_embedding),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (field, t) in layer_fields_mut(layer) {
                out.push((format!("encoder.layer{}.{}", i, field), t));
            }
        }
        out
    }

    /// Snapshots every parameter onto the tape. `trainable` controls whether
    /// gradients are tracked (off for pure evaluation passes).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderBinding {
        let put = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.leaf(t.clone().with_requires_grad(false))
            }
        };
        EncoderBinding {
            config: self.config.clone(),
            token_embedding: put(tape, &self.token_embedding),
            position_embedding: put(tape, &self.position_embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerBinding {
                    wq: put(tape, &l.wq),
                    wk: put(tape, &l.wk),
                    wv: put(tape, &l.wv),
                    wo: put(tape, &l.wo),
                    ffn_in: put(tape, &l.ffn_in),
                    ffn_out: put(tape, &l.ffn_out),
                    ln1_scale: put(tape, &l.ln1_scale),
                    ln1_shift: put(tape, &l.ln1_shift),
                    ln2_scale: put(tape, &l.ln2_scale),
                    ln2_shift: put(tape, &l.ln2_shift),
                })
                .collect(),
        }
    }
}

fn layer_fields<'a>(l: &'a LayerParams) -> Vec<(&'static str, &'a Tensor)> {
    vec![
        ("wq", &l.wq),
        ("wk", &l.wk),
        ("wv", &l.wv),
        ("wo", &l.wo),
        ("ffn_in", &l.ffn_in),
        ("ffn_out", &l.ffn_out),
        ("ln1_scale", &l.ln1_scale),
        ("ln1_shift", &l.ln1_shift),
        ("ln2_scale", &l.ln2_scale),
        ("ln2_shift", &l.ln2_shift),
    ]
}

fn layer_fields_mut<'a>(l: &'a mut LayerParams) -> Vec<(&'static str, &'a mut Tensor)> {
    vec![
        ("wq", &mut l.wq),
        ("wk", &mut l.wk),
        ("wv", &mut l.wv),
        ("wo", &mut l.wo),
        ("ffn_in", &mut l.ffn_in),
        ("ffn_out", &mut l.ffn_out),
        ("ln1_scale", &mut l.ln1_scale),
        ("ln1_shift", &mut l.ln1_shift),
        ("ln2_scale", &mut l.ln2_scale),
        ("ln2_shift", &mut l.ln2_shift),
    ]
}

#[derive(Debug, Clone)]
pub struct LayerBinding {
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub wo: TensorId,
    pub ffn_in: TensorId,
    pub ffn_out: TensorId,
    pub ln1_scale: TensorId,
    pub ln1_shift: TensorId,
    pub ln2_scale: TensorId,
    pub ln2_shift: TensorId,
}

/// Tape handles for one bound copy of the encoder parameters.
#[derive(Debug, Clone)]
pub struct EncoderBinding {
    pub config: EncoderConfig,
    pub token_embedding: TensorId,
    pub position_embedding: TensorId,
    pub layers: Vec<LayerBinding>,
}

impl EncoderBinding {
    /// (name, id) pairs in the same order as `EncoderParams::named_tensors`.
    pub fn named_ids(&self) -> Vec<(String, TensorId)> {
        let mut out = vec![
            ("encoder.token_embedding".to_string(), self.token_embedding),
            ("encoder.position_embedding".to_string(), self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (field, id) in [
                ("wq", l.wq),
                ("wk", l.wk),
                ("wv", l.wv),
                ("wo", l.wo),
                ("ffn_in", l.ffn_in),
                ("ffn_out", l.ffn_out),
                ("ln1_scale", l.ln1_scale),
                ("ln1_shift", l.ln1_shift),
                ("ln2_scale", l.ln2_scale),
                ("ln2_shift", l.ln2_shift),
            ] {
                out.push((format!("encoder.layer{}.{}", i, field), id));
            }
        }
        out
    }
}

/// Per-call encoding options.
#[derive(Debug, Clone, Default)]
pub struct EncodeOptions {
    pub train_mode: bool,
    /// Base seed for this pass; per-sentence/per-site streams derive from it.
    pub dropout_seed: u64,
    pub retain_attention: bool,
    /// Per-sentence embedding dimensions to zero (feature cutoff views).
    pub feature_masks: Option<Vec<Option<Vec<usize>>>>,
}

/// Encoded batch: per-sentence contextual token embeddings plus the padded
/// token grid they came from.
#[derive(Debug)]
pub struct EncodedBatch {
    /// Per-sentence `T x D` tensors on the tape.
    pub h: Vec<TensorId>,
    /// Padded token ids, one row per sentence.
    pub tokens: Vec<Vec<u32>>,
    /// Common padded length.
    pub seq_len: usize,
    pub heads: usize,
    /// `[layer][sentence][head]` attention weights, if retained.
    pub attention: Option<Vec<Vec<Vec<TensorId>>>>,
}

impl EncodedBatch {
    pub fn batch_size(&self) -> usize {
        self.h.len()
    }

    /// Positions pooled into the sentence embedding: everything except
    /// `[PAD]`, `[CLS]`, `[SEP]`. `[MASK]` and `[UNK]` are word positions
    /// and stay in.
    pub fn pool_positions(&self, sentence: usize) -> Vec<usize> {
        self.tokens[sentence]
            .iter()
            .enumerate()
            .filter(|(_, &id)| id != PAD_ID && id != CLS_ID && id != SEP_ID)
            .map(|(j, _)| j)
            .collect()
    }

    /// True for non-padding positions (valid attention keys).
    pub fn key_mask(&self, sentence: usize) -> Vec<bool> {
        self.tokens[sentence].iter().map(|&id| id != PAD_ID).collect()
    }
}

/// Encodes a batch of id sequences. Deterministic given (params, inputs,
/// dropout_seed, train_mode); with `train_mode` off, dropout is the identity.
pub fn encode(
    tape: &mut Tape,
    binding: &EncoderBinding,
    batch: &[Vec<u32>],
    opts: &EncodeOptions,
) -> Result<EncodedBatch, EncodeError> {
    if batch.is_empty() {
        return Err(EncodeError::EmptyBatch);
    }
    let cfg = &binding.config;
    for (i, ids) in batch.iter().enumerate() {
        if ids.len() > cfg.max_len {
            return Err(EncodeError::SequenceTooLong {
                sentence: i,
                len: ids.len(),
                max: cfg.max_len,
            });
        }
    }
    let seq_len = batch.iter().map(|s| s.len()).max().unwrap();
    let tokens: Vec<Vec<u32>> = batch
        .iter()
        .map(|ids| {
            let mut padded = ids.clone();
            padded.resize(seq_len, PAD_ID);
            padded
        })
        .collect();

    let mut attention = if opts.retain_attention {
        Some(vec![Vec::with_capacity(batch.len()); cfg.layers])
    } else {
        None
    };

    let mut h = Vec::with_capacity(batch.len());
    for (s, ids) in tokens.iter().enumerate() {
        let feature_mask = opts
            .feature_masks
            .as_ref()
            .and_then(|masks| masks.get(s))
            .and_then(|m| m.as_ref());
        let hs = encode_sentence_graph(tape, binding, ids, s, feature_mask, opts, &mut attention)?;
        h.push(hs);
    }

    Ok(EncodedBatch { h, tokens, seq_len, heads: cfg.heads, attention })
}

fn encode_sentence_graph(
    tape: &mut Tape,
    binding: &EncoderBinding,
    ids: &[u32],
    sentence: usize,
    feature_mask: Option<&Vec<usize>>,
    opts: &EncodeOptions,
    attention: &mut Option<Vec<Vec<Vec<TensorId>>>>,
) -> Result<TensorId, EncodeError> {
    let cfg = &binding.config;
    let t = ids.len();
    let d = cfg.dim;
    let dh = cfg.head_dim();
    let site_seed = |site: u64| derive_seed(opts.dropout_seed, &[sentence as u64, site]);

    let emb = tape.embedding_lookup(binding.token_embedding, ids)?;
    let pos = tape.slice(binding.position_embedding, 0, 0, t)?;
    let mut x = tape.add(emb, pos)?;

    if let Some(zeroed) = feature_mask {
        let mut mask = vec![1.0; d];
        for &dim in zeroed {
            if dim < d {
                mask[dim] = 0.0;
            }
        }
        let mask_const = tape.constant(vec![d], mask)?;
        x = tape.multiply(x, mask_const)?;
    }

    if opts.train_mode && cfg.dropout > 0.0 {
        x = tape.dropout(x, cfg.dropout, site_seed(0))?;
    }

    // [PAD] keys get a bias so negative that their softmax weight underflows
    // to exactly zero.
    let bias: Vec<f64> =
        ids.iter().map(|&id| if id == PAD_ID { MASK_BIAS } else { 0.0 }).collect();
    let bias_const = tape.constant(vec![t], bias)?;

    for (l, layer) in binding.layers.iter().enumerate() {
        let q = tape.matmul(x, layer.wq)?;
        let k = tape.matmul(x, layer.wk)?;
        let v = tape.matmul(x, layer.wv)?;

        let mut head_ctx = Vec::with_capacity(cfg.heads);
        let mut head_attn = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = tape.slice(q, 1, head * dh, dh)?;
            let kh = tape.slice(k, 1, head * dh, dh)?;
            let vh = tape.slice(v, 1, head * dh, dh)?;
            let scores = tape.matmul_bt(qh, kh)?;
            let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let biased = tape.add(scaled, bias_const)?;
            let attn = tape.softmax(biased)?;
            head_attn.push(attn);
            head_ctx.push(tape.matmul(attn, vh)?);
        }
        if let Some(retained) = attention.as_mut() {
            retained[l].push(head_attn);
        }

        let ctx = tape.concat(&head_ctx, 1)?;
        let mut proj = tape.matmul(ctx, layer.wo)?;
        if opts.train_mode && cfg.dropout > 0.0 {
            proj = tape.dropout(proj, cfg.dropout, site_seed(1 + 2 * l as u64))?;
        }
        let res1 = tape.add(x, proj)?;
        x = tape.layer_norm(res1, layer.ln1_scale, layer.ln1_shift, LN_EPS)?;

        let ff_hidden = tape.matmul(x, layer.ffn_in)?;
        let ff_act = tape.relu(ff_hidden)?;
        let mut ff = tape.matmul(ff_act, layer.ffn_out)?;
        if opts.train_mode && cfg.dropout > 0.0 {
            ff = tape.dropout(ff, cfg.dropout, site_seed(2 + 2 * l as u64))?;
        }
        let res2 = tape.add(x, ff)?;
        x = tape.layer_norm(res2, layer.ln2_scale, layer.ln2_shift, LN_EPS)?;
    }
    Ok(x)
}

/// Average-pools each sentence's content-token rows into a `1 x D`
/// embedding. `[PAD]`, `[CLS]`, `[SEP]` positions are excluded.
pub fn sentence_embedding(
    tape: &mut Tape,
    batch: &EncodedBatch,
) -> Result<Vec<TensorId>, EncodeError> {
    let mut pooled = Vec::with_capacity(batch.batch_size());
    for s in 0..batch.batch_size() {
        let positions = batch.pool_positions(s);
        if positions.is_empty() {
            return Err(EncodeError::EmptySentence { sentence: s });
        }
        let mut weights = vec![0.0; batch.seq_len];
        let w = 1.0 / positions.len() as f64;
        for &j in &positions {
            weights[j] = w;
        }
        let weights_const = tape.constant(vec![1, batch.seq_len], weights)?;
        pooled.push(tape.matmul(weights_const, batch.h[s])?);
    }
    Ok(pooled)
}

/// Attention weights of one layer, `batch x heads x T x T` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub batch: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub data: Vec<f64>,
}

impl AttentionDump {
    pub fn weight(&self, sentence: usize, head: usize, query: usize, key: usize) -> f64 {
        let t = self.seq_len;
        self.data[((sentence * self.heads + head) * t + query) * t + key]
    }
}

/// Extracts retained attention weights for one layer.
pub fn dump_attention(
    tape: &Tape,
    batch: &EncodedBatch,
    layer: usize,
) -> Result<AttentionDump, EncodeError> {
    let retained = batch.attention.as_ref().ok_or(EncodeError::AttentionNotRetained)?;
    if layer >= retained.len() {
        return Err(EncodeError::LayerOutOfRange { layer, layers: retained.len() });
    }
    let t = batch.seq_len;
    let mut data = Vec::with_capacity(batch.batch_size() * batch.heads * t * t);
    for sentence_heads in &retained[layer] {
        for &attn in sentence_heads {
            data.extend_from_slice(tape.data(attn));
        }
    }
    Ok(AttentionDump { batch: batch.batch_size(), heads: batch.heads, seq_len: t, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::MASK_ID;

    fn tiny_config(vocab: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: vocab,
            dim: 16,
            layers: 2,
            heads: 2,
            ffn_dim: 32,
            max_len: 12,
            dropout: 0.1,
        }
    }

    fn sentence(content: &[u32]) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        ids.extend_from_slice(content);
        ids.push(SEP_ID);
        ids
    }

    #[test]
    fn encode_produces_per_sentence_t_by_d() {
        let params = EncoderParams::init(tiny_config(20), 1);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let batch = vec![sentence(&[5, 6, 7]), sentence(&[8, 9])];
        let enc = encode(&mut tape, &binding, &batch, &EncodeOptions::default()).unwrap();
        assert_eq!(enc.batch_size(), 2);
        assert_eq!(enc.seq_len, 5);
        for &h in &enc.h {
            assert_eq!(tape.shape(h), &[5, 16]);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_for_duplicate_sentences() {
        let params = EncoderParams::init(tiny_config(20), 2);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let batch = vec![sentence(&[5, 6, 7]), sentence(&[5, 6, 7])];
        let enc = encode(&mut tape, &binding, &batch, &EncodeOptions::default()).unwrap();
        assert_eq!(tape.data(enc.h[0]), tape.data(enc.h[1]));
    }

    #[test]
    fn train_mode_dropout_differs_per_sentence_slot() {
        let params = EncoderParams::init(tiny_config(20), 3);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let batch = vec![sentence(&[5, 6, 7]), sentence(&[5, 6, 7])];
        let opts = EncodeOptions { train_mode: true, dropout_seed: 11, ..Default::default() };
        let enc = encode(&mut tape, &binding, &batch, &opts).unwrap();
        assert_ne!(tape.data(enc.h[0]), tape.data(enc.h[1]));
    }

    #[test]
    fn encode_is_repeatable_given_the_same_seed() {
        let params = EncoderParams::init(tiny_config(20), 4);
        let batch = vec![sentence(&[5, 6, 7, 8])];
        let opts = EncodeOptions { train_mode: true, dropout_seed: 21, ..Default::default() };
        let run = |tape: &mut Tape| {
            let binding = params.bind(tape, false);
            let enc = encode(tape, &binding, &batch, &opts).unwrap();
            tape.data(enc.h[0]).to_vec()
        };
        let a = run(&mut Tape::new());
        let b = run(&mut Tape::new());
        assert_eq!(a, b);
    }

    #[test]
    fn too_long_sequence_errors_with_sentence_index() {
        let params = EncoderParams::init(tiny_config(20), 5);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let long: Vec<u32> = (0..13).map(|_| 5).collect();
        let err =
            encode(&mut tape, &binding, &[sentence(&[5]), long], &EncodeOptions::default())
                .unwrap_err();
        match err {
            EncodeError::SequenceTooLong { sentence, len, max } => {
                assert_eq!(sentence, 1);
                assert_eq!(len, 13);
                assert_eq!(max, 12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_pad_columns_are_zero() {
        let params = EncoderParams::init(tiny_config(20), 6);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        // Second sentence is shorter, so it gets two PAD columns.
        let batch = vec![sentence(&[5, 6, 7, 8]), sentence(&[9, 10])];
        let opts = EncodeOptions { retain_attention: true, ..Default::default() };
        let enc = encode(&mut tape, &binding, &batch, &opts).unwrap();
        for layer in 0..2 {
            let dump = dump_attention(&tape, &enc, layer).unwrap();
            for s in 0..2 {
                let keys = enc.key_mask(s);
                for head in 0..dump.heads {
                    for q in 0..dump.seq_len {
                        let mut sum = 0.0;
                        for (k, &valid) in keys.iter().enumerate() {
                            let w = dump.weight(s, head, q, k);
                            if valid {
                                sum += w;
                            } else {
                                assert_eq!(w, 0.0, "pad key got weight {w}");
                            }
                        }
                        assert!((sum - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn dump_attention_requires_retention() {
        let params = EncoderParams::init(tiny_config(20), 7);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let enc =
            encode(&mut tape, &binding, &[sentence(&[5])], &EncodeOptions::default()).unwrap();
        assert!(matches!(
            dump_attention(&tape, &enc, 0),
            Err(EncodeError::AttentionNotRetained)
        ));
        let opts = EncodeOptions { retain_attention: true, ..Default::default() };
        let enc = encode(&mut tape, &binding, &[sentence(&[5])], &opts).unwrap();
        assert!(matches!(
            dump_attention(&tape, &enc, 2),
            Err(EncodeError::LayerOutOfRange { layer: 2, layers: 2 })
        ));
    }

    #[test]
    fn pooling_is_the_arithmetic_mean_of_content_rows() {
        // Hand-built batch: T=4 ([CLS] a b [SEP]), rows known.
        let mut tape = Tape::new();
        let h = tape
            .constant(vec![4, 2], vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0, 9.0, 9.0])
            .unwrap();
        let batch = EncodedBatch {
            h: vec![h],
            tokens: vec![vec![CLS_ID, 5, 6, SEP_ID]],
            seq_len: 4,
            heads: 1,
            attention: None,
        };
        let pooled = sentence_embedding(&mut tape, &batch).unwrap();
        assert_eq!(tape.data(pooled[0]), &[2.0, 3.0]);
    }

    #[test]
    fn pooling_single_content_token_is_identity() {
        let mut tape = Tape::new();
        let h = tape.constant(vec![3, 2], vec![0.0, 0.0, 7.0, -2.0, 0.0, 0.0]).unwrap();
        let batch = EncodedBatch {
            h: vec![h],
            tokens: vec![vec![CLS_ID, MASK_ID, SEP_ID]],
            seq_len: 3,
            heads: 1,
            attention: None,
        };
        let pooled = sentence_embedding(&mut tape, &batch).unwrap();
        assert_eq!(tape.data(pooled[0]), &[7.0, -2.0]);
    }

    #[test]
    fn pooling_empty_sentence_errors() {
        let mut tape = Tape::new();
        let h = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let batch = EncodedBatch {
            h: vec![h],
            tokens: vec![vec![CLS_ID, SEP_ID]],
            seq_len: 2,
            heads: 1,
            attention: None,
        };
        assert!(matches!(
            sentence_embedding(&mut tape, &batch),
            Err(EncodeError::EmptySentence { sentence: 0 })
        ));
    }

    #[test]
    fn batch_order_only_permutes_outputs() {
        let params = EncoderParams::init(tiny_config(20), 8);
        let s1 = sentence(&[5, 6, 7]);
        let s2 = sentence(&[8, 9, 10]);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let fwd = encode(&mut tape, &binding, &[s1.clone(), s2.clone()], &EncodeOptions::default())
            .unwrap();
        let mut tape2 = Tape::new();
        let binding2 = params.bind(&mut tape2, false);
        let rev = encode(&mut tape2, &binding2, &[s2, s1], &EncodeOptions::default()).unwrap();
        assert_eq!(tape.data(fwd.h[0]), tape2.data(rev.h[1]));
        assert_eq!(tape.data(fwd.h[1]), tape2.data(rev.h[0]));
    }

    #[test]
    fn named_ids_match_named_tensors() {
        let params = EncoderParams::init(tiny_config(8), 9);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, true);
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let bound: Vec<String> = binding.named_ids().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, bound);
    }

    #[test]
    fn feature_mask_changes_the_encoding() {
        let params = EncoderParams::init(tiny_config(20), 10);
        let batch = vec![sentence(&[5, 6])];
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, false);
        let plain = encode(&mut tape, &binding, &batch, &EncodeOptions::default()).unwrap();
        let opts = EncodeOptions {
            feature_masks: Some(vec![Some(vec![0, 3])]),
            ..Default::default()
        };
        let masked = encode(&mut tape, &binding, &batch, &opts).unwrap();
        assert_ne!(tape.data(plain.h[0]), tape.data(masked.h[0]));
    }
}

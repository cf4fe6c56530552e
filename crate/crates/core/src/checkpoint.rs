//! Binary checkpoint format.
//!
//! Flat little-endian layout, byte-stable across runs given identical state:
//!
//! ```text
//! magic            8 bytes  "FQSENT01"
//! header           u64 vocab_size, dim, layers, heads, ffn_dim, max_len,
//!                  f64 dropout, u64 disc_hidden, f64 lambda, u64 step
//! vocabulary       u64 content count, then per token: u32 len + utf8 bytes
//!                  (specials are implicit at ids 0-4)
//! counts           u64 per id (vocab_size entries)
//! labels           u8 per id (vocab_size entries)
//! parameters       u64 block count, then named blocks in canonical order:
//!                  u32 name len + name, u8 ndim, u64 dims.., f64 data..
//! optimizer        u8 present flag; if set: u64 t, u64 block count, then
//!                  per block: u32 name len + name, u64 numel, f64 m.., f64 v..
//! ```
//!
//! Loading parses the whole file before returning, so a truncated or
//! corrupted file yields a structured error and no partial state.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::objectives::DiscriminatorParams;
use crate::tensor::Tensor;
use crate::vocab::{FrequencyTable, Vocabulary, SPECIAL_TOKENS};

pub const MAGIC: &[u8; 8] = b"FQSENT01";

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    /// The file ended before the expected data.
    Truncated,
    BadMagic,
    Corrupt { detail: String },
    /// The checkpoint header disagrees with the expected configuration.
    HeaderMismatch { fields: Vec<String> },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "i/o error: {}", e),
            CheckpointError::Truncated => write!(f, "checkpoint file is truncated"),
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::Corrupt { detail } => write!(f, "corrupt checkpoint: {}", detail),
            CheckpointError::HeaderMismatch { fields } => {
                write!(f, "checkpoint header does not match config: {}", fields.join(", "))
            }
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// Optimizer state carried through save/resume.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    /// (name, first moment, second moment), sorted by name.
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

/// Everything needed to resume training or run evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub disc_sim: DiscriminatorParams,
    pub disc_info: DiscriminatorParams,
    pub vocab: Vocabulary,
    pub freq: FrequencyTable,
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn disc_hidden(&self) -> usize {
        self.disc_sim.w1.shape()[1]
    }

    /// Verifies the architecture head against an expected configuration,
    /// listing every differing field.
    pub fn check_header(
        &self,
        expected: &EncoderConfig,
        expected_disc_hidden: usize,
    ) -> Result<(), CheckpointError> {
        let got = &self.encoder.config;
        let mut fields = Vec::new();
        let mut cmp = |name: &str, a: usize, b: usize| {
            if a != b {
                fields.push(format!("{} (checkpoint {}, config {})", name, a, b));
            }
        };
        cmp("vocab_size", got.vocab_size, expected.vocab_size);
        cmp("dim", got.dim, expected.dim);
        cmp("layers", got.layers, expected.layers);
        cmp("heads", got.heads, expected.heads);
        cmp("ffn_dim", got.ffn_dim, expected.ffn_dim);
        cmp("max_len", got.max_len, expected.max_len);
        cmp("disc_hidden", self.disc_hidden(), expected_disc_hidden);
        if got.dropout != expected.dropout {
            fields.push(format!(
                "dropout (checkpoint {}, config {})",
                got.dropout, expected.dropout
            ));
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(CheckpointError::HeaderMismatch { fields })
        }
    }
}

// ---- writing ---------------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn tensor_block(&mut self, name: &str, t: &Tensor) {
        self.str(name);
        self.u8(t.shape().len() as u8);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        self.f64s(t.data());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let cfg = &ckpt.encoder.config;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u64(cfg.vocab_size as u64);
    w.u64(cfg.dim as u64);
    w.u64(cfg.layers as u64);
    w.u64(cfg.heads as u64);
    w.u64(cfg.ffn_dim as u64);
    w.u64(cfg.max_len as u64);
    w.f64(cfg.dropout);
    w.u64(ckpt.disc_hidden() as u64);
    w.f64(ckpt.freq.lambda());
    w.u64(ckpt.step);

    w.u64(ckpt.vocab.content_len() as u64);
    for id in ckpt.vocab.content_ids() {
        w.str(ckpt.vocab.token(id).expect("dense ids"));
    }
    for &c in ckpt.freq.counts() {
        w.u64(c);
    }
    for &l in ckpt.freq.labels() {
        w.u8(l);
    }

    let blocks = named_blocks(ckpt);
    w.u64(blocks.len() as u64);
    for (name, tensor) in blocks {
        w.tensor_block(&name, tensor);
    }

    match &ckpt.optimizer {
        Some(opt) => {
            w.u8(1);
            w.u64(opt.t);
            w.u64(opt.moments.len() as u64);
            for (name, m, v) in &opt.moments {
                w.str(name);
                w.u64(m.len() as u64);
                w.f64s(m);
                w.f64s(v);
            }
        }
        None => w.u8(0),
    }

    fs::write(path, &w.buf)?;
    Ok(())
}

fn named_blocks(ckpt: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut blocks = ckpt.encoder.named_tensors();
    blocks.extend(ckpt.disc_sim.named_tensors("disc_sim"));
    blocks.extend(ckpt.disc_info.named_tensors("disc_info"));
    blocks
}

// ---- reading ---------------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Corrupt { detail: "non-utf8 string".to_string() })
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn tensor_block(&mut self, expect_name: &str) -> Result<Tensor, CheckpointError> {
        let name = self.str()?;
        if name != expect_name {
            return Err(CheckpointError::Corrupt {
                detail: format!("expected parameter block `{}`, found `{}`", expect_name, name),
            });
        }
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = self.f64s(numel)?;
        Tensor::new(shape, data)
            .map(|t| t.with_requires_grad(true))
            .map_err(|e| CheckpointError::Corrupt { detail: e.to_string() })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let vocab_size = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let layers = r.u64()? as usize;
    let heads = r.u64()? as usize;
    let ffn_dim = r.u64()? as usize;
    let max_len = r.u64()? as usize;
    let dropout = r.f64()?;
    let disc_hidden = r.u64()? as usize;
    let lambda = r.f64()?;
    let step = r.u64()?;
    let config = EncoderConfig { vocab_size, dim, layers, heads, ffn_dim, max_len, dropout };

    let content = r.u64()? as usize;
    if content + SPECIAL_TOKENS.len() != vocab_size {
        return Err(CheckpointError::Corrupt {
            detail: format!(
                "vocab size {} disagrees with {} content tokens",
                vocab_size, content
            ),
        });
    }
    let mut tokens = Vec::with_capacity(content);
    for _ in 0..content {
        tokens.push(r.str()?);
    }
    let vocab = Vocabulary::with_content_tokens(tokens);
    if vocab.len() != vocab_size {
        return Err(CheckpointError::Corrupt {
            detail: "duplicate tokens in checkpoint vocabulary".to_string(),
        });
    }
    let mut counts = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        counts.push(r.u64()?);
    }
    let mut labels = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        labels.push(r.u8()?);
    }
    let freq = FrequencyTable::new(&vocab, counts, labels, lambda);

    // Parameter blocks arrive in the canonical order implied by the header.
    let template_encoder = expected_encoder_names(&config);
    let expected_blocks: Vec<String> = template_encoder
        .into_iter()
        .chain(disc_names("disc_sim"))
        .chain(disc_names("disc_info"))
        .collect();
    let count = r.u64()? as usize;
    if count != expected_blocks.len() {
        return Err(CheckpointError::Corrupt {
            detail: format!(
                "expected {} parameter blocks, found {}",
                expected_blocks.len(),
                count
            ),
        });
    }
    let mut tensors = Vec::with_capacity(count);
    for name in &expected_blocks {
        tensors.push(r.tensor_block(name)?);
    }

    let mut iter = tensors.into_iter();
    let encoder = rebuild_encoder(config, &mut iter)?;
    let disc_sim = rebuild_discriminator(&mut iter)?;
    let disc_info = rebuild_discriminator(&mut iter)?;
    if disc_sim.w1.shape()[1] != disc_hidden {
        return Err(CheckpointError::Corrupt {
            detail: "discriminator hidden width disagrees with header".to_string(),
        });
    }

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let n = r.u64()? as usize;
            let mut moments = Vec::with_capacity(n);
            for _ in 0..n {
                let name = r.str()?;
                let numel = r.u64()? as usize;
                let m = r.f64s(numel)?;
                let v = r.f64s(numel)?;
                moments.push((name, m, v));
            }
            Some(OptimizerState { t, moments })
        }
        other => {
            return Err(CheckpointError::Corrupt {
                detail: format!("bad optimizer flag {}", other),
            })
        }
    };

    if r.pos != r.buf.len() {
        return Err(CheckpointError::Corrupt {
            detail: format!("{} trailing bytes", r.buf.len() - r.pos),
        });
    }

    Ok(Checkpoint { encoder, disc_sim, disc_info, vocab, freq, step, optimizer })
}

fn expected_encoder_names(config: &EncoderConfig) -> Vec<String> {
    let mut names = vec![
        "encoder.token_embedding".to_string(),
        "encoder.position_embedding".to_string(),
    ];
    for i in 0..config.layers {
        for field in [
            "wq", "wk", "wv", "wo", "ffn_in", "ffn_out", "ln1_scale", "ln1_shift", "ln2_scale",
            "ln2_shift",
        ] {
            names.push(format!("encoder.layer{}.{}", i, field));
        }
    }
    names
}

fn disc_names(prefix: &str) -> Vec<String> {
    ["w1", "b1", "w2", "b2"].iter().map(|f| format!("{}.{}", prefix, f)).collect()
}

fn rebuild_encoder(
    config: EncoderConfig,
    iter: &mut impl Iterator<Item = Tensor>,
) -> Result<EncoderParams, CheckpointError> {
    let mut next = || {
        iter.next().ok_or(CheckpointError::Corrupt { detail: "missing block".to_string() })
    };
    let token_embedding = next()?;
    let position_embedding = next()?;
    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        layers.push(crate::encoder::LayerParams {
            wq: next()?,
            wk: next()?,
            wv: next()?,
            wo: next()?,
            ffn_in: next()?,
            ffn_out: next()?,
            ln1_scale: next()?,
            ln1_shift: next()?,
            ln2_scale: next()?,
            ln2_shift: next()?,
        });
    }
    Ok(EncoderParams { config, token_embedding, position_embedding, layers })
}

fn rebuild_discriminator(
    iter: &mut impl Iterator<Item = Tensor>,
) -> Result<DiscriminatorParams, CheckpointError> {
    let mut next = || {
        iter.next().ok_or(CheckpointError::Corrupt { detail: "missing block".to_string() })
    };
    Ok(DiscriminatorParams { w1: next()?, b1: next()?, w2: next()?, b2: next()? })
}

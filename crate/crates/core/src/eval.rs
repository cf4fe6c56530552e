//! Semantic textual similarity evaluation: Spearman rank correlation between
//! gold scores and cosine similarities of sentence embeddings.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use crate::encoder::{encode, sentence_embedding, EncodeError, EncodeOptions, EncoderParams};
use crate::tape::Tape;
use crate::tensor::{cosine, TensorError};
use crate::vocab::{encode_sentence, Vocabulary};

/// Batch size used when encoding evaluation sentences.
const EVAL_BATCH: usize = 32;

#[derive(Debug)]
pub enum EvalError {
    /// Spearman correlation is undefined on a constant sequence.
    ConstantInput,
    LengthMismatch { left: usize, right: usize },
    TooShort { len: usize },
    Parse { line: usize, detail: String },
    ScoreOutOfRange { line: usize, score: f64 },
    Io(io::Error),
    Encode(EncodeError),
    Tensor(TensorError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::ConstantInput => {
                write!(f, "spearman correlation of a constant sequence is undefined")
            }
            EvalError::LengthMismatch { left, right } => {
                write!(f, "sequence lengths differ: {} vs {}", left, right)
            }
            EvalError::TooShort { len } => {
                write!(f, "need at least 2 observations, got {}", len)
            }
            EvalError::Parse { line, detail } => write!(f, "parse error at line {}: {}", line, detail),
            EvalError::ScoreOutOfRange { line, score } => {
                write!(f, "gold score {} at line {} outside [0, 5]", score, line)
            }
            EvalError::Io(e) => write!(f, "i/o error: {}", e),
            EvalError::Encode(e) => write!(f, "{}", e),
            EvalError::Tensor(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<io::Error> for EvalError {
    fn from(e: io::Error) -> Self {
        EvalError::Io(e)
    }
}
impl From<EncodeError> for EvalError {
    fn from(e: EncodeError) -> Self {
        EvalError::Encode(e)
    }
}
impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Tensor(e)
    }
}

/// Ranks with average ranks for ties (1-based).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold tied values; assign their average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of (tie-averaged) ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort { len: x.len() });
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(ry.iter()) {
        let da = a - mean;
        let db = b - mean;
        cov += da * db;
        var_x += da * da;
        var_y += db * db;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// A sentence pair with an annotated similarity score in [0, 5].
#[derive(Debug, Clone, PartialEq)]
pub struct StsPair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold: f64,
}

/// Reads a pairs file: `sentence_a<TAB>sentence_b<TAB>score` per line.
pub fn read_sts_pairs(path: &Path) -> Result<Vec<StsPair>, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(a), Some(b), Some(score)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(EvalError::Parse {
                line: lineno,
                detail: "expected three tab-separated fields".to_string(),
            });
        };
        let gold: f64 = score.trim().parse().map_err(|_| EvalError::Parse {
            line: lineno,
            detail: format!("bad score `{}`", score),
        })?;
        if !(0.0..=5.0).contains(&gold) {
            return Err(EvalError::ScoreOutOfRange { line: lineno, score: gold });
        }
        pairs.push(StsPair { sentence_a: a.to_string(), sentence_b: b.to_string(), gold });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub cosine: f64,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsReport {
    pub spearman: f64,
    pub pairs: Vec<PairScore>,
}

/// Embeds the sentences of each pair (evaluation mode, no dropout), pools,
/// and correlates per-pair cosines with the gold scores.
pub fn evaluate_sts(
    pairs: &[StsPair],
    encoder: &EncoderParams,
    vocab: &Vocabulary,
) -> Result<StsReport, EvalError> {
    let mut cosines = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_BATCH) {
        let mut batch = Vec::with_capacity(chunk.len() * 2);
        for pair in chunk {
            batch.push(encode_sentence(&pair.sentence_a, vocab));
            batch.push(encode_sentence(&pair.sentence_b, vocab));
        }
        let mut tape = Tape::new();
        let binding = encoder.bind(&mut tape, false);
        let enc = encode(&mut tape, &binding, &batch, &EncodeOptions::default())?;
        let pooled = sentence_embedding(&mut tape, &enc)?;
        for pair in pooled.chunks_exact(2) {
            cosines.push(cosine(tape.data(pair[0]), tape.data(pair[1]))?);
        }
    }
    let golds: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
    let rho = spearman(&cosines, &golds)?;
    let pair_scores = cosines
        .into_iter()
        .zip(golds.into_iter())
        .map(|(cosine, gold)| PairScore { cosine, gold })
        .collect();
    Ok(StsReport { spearman: rho, pairs: pair_scores })
}

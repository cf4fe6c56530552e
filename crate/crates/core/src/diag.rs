//! Embedding-space diagnostics: anisotropy statistics, a frequency probe on
//! frozen embeddings, and raw embedding export with an optional 2-D linear
//! projection.
//!
//! The isotropy summary is the mean pairwise cosine over a seeded subsample
//! of contextual token embeddings, split by frequency band. The probe reuses
//! the discriminator architecture and reports held-out accuracy, with the
//! held-out split made by token type so it measures generalizable frequency
//! signal rather than memorization.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::{encode, sentence_embedding, EncodeError, EncodeOptions, EncoderParams};
use crate::objectives::DiscriminatorParams;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, stream};
use crate::tape::Tape;
use crate::tensor::{cosine, TensorError};
use crate::vocab::{FrequencyTable, Vocabulary};

const ENCODE_BATCH: usize = 32;

#[derive(Debug)]
pub enum DiagError {
    EmptySample,
    /// Too few token types to carve out a held-out probe split.
    SplitTooSmall { types: usize },
    Io(io::Error),
    Encode(EncodeError),
    Tensor(TensorError),
}

impl fmt::Display for DiagError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagError::EmptySample => write!(f, "diagnostic sample is empty"),
            DiagError::SplitTooSmall { types } => {
                write!(f, "only {} token types; cannot hold out a probe split", types)
            }
            DiagError::Io(e) => write!(f, "i/o error: {}", e),
            DiagError::Encode(e) => write!(f, "{}", e),
            DiagError::Tensor(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for DiagError {}

impl From<io::Error> for DiagError {
    fn from(e: io::Error) -> Self {
        DiagError::Io(e)
    }
}
impl From<EncodeError> for DiagError {
    fn from(e: EncodeError) -> Self {
        DiagError::Encode(e)
    }
}
impl From<TensorError> for DiagError {
    fn from(e: TensorError) -> Self {
        DiagError::Tensor(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    /// Sentences drawn from the corpus (0 = all).
    pub sample_size: usize,
    /// Embedding pairs sampled for the cosine statistics.
    pub pair_sample: usize,
    pub seed: u64,
    /// Hidden width of the probe; use the checkpoint's discriminator width
    /// so accuracies are comparable before/after adversarial tuning.
    pub probe_hidden: usize,
    pub probe_epochs: usize,
    pub probe_learning_rate: f64,
    pub probe_batch: usize,
    /// Fraction of token types held out for probe evaluation.
    pub holdout_fraction: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            sample_size: 256,
            pair_sample: 2000,
            seed: 0,
            probe_hidden: 64,
            probe_epochs: 15,
            probe_learning_rate: 1e-3,
            probe_batch: 64,
            holdout_fraction: 0.2,
        }
    }
}

/// One contextual token embedding drawn from an encoded sentence.
#[derive(Debug, Clone)]
pub struct TokenEmbedding {
    pub token_id: u32,
    pub sentence: usize,
    pub position: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub mean_pairwise_cosine: f64,
    pub mean_norm_high_freq: f64,
    pub mean_norm_low_freq: f64,
    pub within_high_cosine: f64,
    pub within_low_cosine: f64,
    pub cross_band_cosine: f64,
    /// |mean(within-band cosines) - cross-band cosine|: how separated the
    /// two frequency bands are. Shrinks as the space becomes isotropic.
    pub band_separation: f64,
    /// Balanced held-out accuracy of the frequency probe (chance = 0.5).
    pub probe_accuracy: f64,
    pub token_sample: usize,
    pub pair_sample: usize,
    pub probe_train: usize,
    pub probe_holdout: usize,
}

impl fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mean_pairwise_cosine: {}", self.mean_pairwise_cosine)?;
        writeln!(f, "mean_norm_high_freq: {}", self.mean_norm_high_freq)?;
        writeln!(f, "mean_norm_low_freq: {}", self.mean_norm_low_freq)?;
        writeln!(f, "within_high_cosine: {}", self.within_high_cosine)?;
        writeln!(f, "within_low_cosine: {}", self.within_low_cosine)?;
        writeln!(f, "cross_band_cosine: {}", self.cross_band_cosine)?;
        writeln!(f, "band_separation: {}", self.band_separation)?;
        writeln!(f, "probe_accuracy: {}", self.probe_accuracy)?;
        writeln!(f, "token_sample: {}", self.token_sample)?;
        writeln!(f, "pair_sample: {}", self.pair_sample)?;
        writeln!(f, "probe_train: {}", self.probe_train)?;
        write!(f, "probe_holdout: {}", self.probe_holdout)
    }
}

/// Seeded sentence subsample of the corpus (indices into `corpus`).
fn sample_indices(n: usize, sample_size: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    if sample_size > 0 && sample_size < n {
        indices.shuffle(&mut stream(seed, &[0x5a]));
        indices.truncate(sample_size);
        indices.sort_unstable();
    }
    indices
}

/// Encodes a seeded sample of sentences (evaluation mode) and collects the
/// contextual embeddings of every labeled (non-special) token.
pub fn collect_token_embeddings(
    encoder: &EncoderParams,
    corpus: &[Vec<u32>],
    sample_size: usize,
    seed: u64,
) -> Result<Vec<TokenEmbedding>, DiagError> {
    let indices = sample_indices(corpus.len(), sample_size, seed);
    let mut out = Vec::new();
    for chunk in indices.chunks(ENCODE_BATCH) {
        let batch: Vec<Vec<u32>> = chunk.iter().map(|&i| corpus[i].clone()).collect();
        if batch.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let binding = encoder.bind(&mut tape, false);
        let enc = encode(&mut tape, &binding, &batch, &EncodeOptions::default())?;
        let d = encoder.config.dim;
        for (s, &sentence_idx) in chunk.iter().enumerate() {
            let h = tape.data(enc.h[s]);
            for (p, &id) in enc.tokens[s].iter().enumerate() {
                if Vocabulary::is_special(id) {
                    continue;
                }
                out.push(TokenEmbedding {
                    token_id: id,
                    sentence: sentence_idx,
                    position: p,
                    values: h[p * d..(p + 1) * d].to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// Cosine and norm statistics over a seeded subsample of embedding pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    pub mean_pairwise_cosine: f64,
    pub mean_norm_high_freq: f64,
    pub mean_norm_low_freq: f64,
    pub within_high_cosine: f64,
    pub within_low_cosine: f64,
    pub cross_band_cosine: f64,
    pub pair_sample: usize,
}

pub fn embedding_statistics(
    embeddings: &[TokenEmbedding],
    labels: &[u8],
    pair_sample: usize,
    seed: u64,
) -> Result<EmbeddingStats, DiagError> {
    if embeddings.len() < 2 {
        return Err(DiagError::EmptySample);
    }
    let mut rng = stream(seed, &[0xc0]);
    let m = embeddings.len();
    let mut sums = [0.0f64; 4]; // all, within-high, within-low, cross
    let mut counts = [0usize; 4];
    for _ in 0..pair_sample {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let c = match cosine(&embeddings[i].values, &embeddings[j].values) {
            Ok(c) => c,
            // Zero embeddings carry no angle; skip the pair.
            Err(_) => continue,
        };
        sums[0] += c;
        counts[0] += 1;
        let li = labels[embeddings[i].token_id as usize];
        let lj = labels[embeddings[j].token_id as usize];
        let bucket = match (li, lj) {
            (0, 0) => 1,
            (1, 1) => 2,
            _ => 3,
        };
        sums[bucket] += c;
        counts[bucket] += 1;
    }
    if counts[0] == 0 {
        return Err(DiagError::EmptySample);
    }
    let mean = |b: usize| if counts[b] == 0 { 0.0 } else { sums[b] / counts[b] as f64 };

    let mut norm_sums = [0.0f64; 2];
    let mut norm_counts = [0usize; 2];
    for e in embeddings {
        let band = labels[e.token_id as usize] as usize;
        let norm = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        norm_sums[band] += norm;
        norm_counts[band] += 1;
    }
    let norm_mean =
        |b: usize| if norm_counts[b] == 0 { 0.0 } else { norm_sums[b] / norm_counts[b] as f64 };

    Ok(EmbeddingStats {
        mean_pairwise_cosine: mean(0),
        mean_norm_high_freq: norm_mean(0),
        mean_norm_low_freq: norm_mean(1),
        within_high_cosine: mean(1),
        within_low_cosine: mean(2),
        cross_band_cosine: mean(3),
        pair_sample: counts[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    pub accuracy: f64,
    pub train_items: usize,
    pub holdout_items: usize,
}

/// Trains a fresh discriminator-shaped probe on frozen embeddings to predict
/// the frequency label, holding out a fraction of token *types* for the
/// reported accuracy.
pub fn train_frequency_probe(
    embeddings: &[TokenEmbedding],
    labels: &[u8],
    cfg: &DiagnosticsConfig,
) -> Result<ProbeOutcome, DiagError> {
    if embeddings.is_empty() {
        return Err(DiagError::EmptySample);
    }
    let dim = embeddings[0].values.len();

    let mut types: Vec<u32> = embeddings.iter().map(|e| e.token_id).collect();
    types.sort_unstable();
    types.dedup();
    if types.len() < 2 {
        return Err(DiagError::SplitTooSmall { types: types.len() });
    }
    types.shuffle(&mut stream(cfg.seed, &[0x51]));
    let holdout_types = ((cfg.holdout_fraction * types.len() as f64).ceil() as usize)
        .clamp(1, types.len() - 1);
    let holdout: std::collections::HashSet<u32> =
        types[..holdout_types].iter().copied().collect();

    let mut train_idx = Vec::new();
    let mut hold_idx = Vec::new();
    for (i, e) in embeddings.iter().enumerate() {
        if holdout.contains(&e.token_id) {
            hold_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if train_idx.is_empty() || hold_idx.is_empty() {
        return Err(DiagError::SplitTooSmall { types: types.len() });
    }

    // Cap instances per type so the most frequent types cannot flood the
    // pool, and weight the loss by inverse class frequency instead of
    // subsampling; that keeps the full diversity of both classes while the
    // class prior stays neutral.
    const PER_TYPE_CAP: usize = 10;
    let mut per_type: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    let mut class_counts = [0usize; 2];
    train_idx.shuffle(&mut stream(cfg.seed, &[0x54]));
    let mut capped = Vec::with_capacity(train_idx.len());
    for &i in &train_idx {
        let e = &embeddings[i];
        let seen = per_type.entry(e.token_id).or_insert(0);
        if *seen >= PER_TYPE_CAP {
            continue;
        }
        *seen += 1;
        class_counts[labels[e.token_id as usize] as usize] += 1;
        capped.push(i);
    }
    if class_counts[0] == 0 || class_counts[1] == 0 {
        return Err(DiagError::SplitTooSmall { types: types.len() });
    }
    let total = (class_counts[0] + class_counts[1]) as f64;
    let class_weight =
        [total / (2.0 * class_counts[0] as f64), total / (2.0 * class_counts[1] as f64)];
    let mut train_idx = capped;
    train_idx.sort_unstable();

    let mut probe = DiscriminatorParams::init(dim, cfg.probe_hidden, derive_seed(cfg.seed, &[0x52]));
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.probe_learning_rate,
        ..Default::default()
    });

    for epoch in 0..cfg.probe_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream(cfg.seed, &[0x53, epoch as u64]));
        for batch in order.chunks(cfg.probe_batch) {
            let mut tape = Tape::new();
            let binding = probe.bind(&mut tape, true);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let e = &embeddings[i];
                let x = tape.constant(vec![1, dim], e.values.clone())?;
                let logits = binding.logits(&mut tape, x)?;
                let label = labels[e.token_id as usize];
                let ce = tape.cross_entropy(logits, label as usize)?;
                losses.push(tape.scale(ce, class_weight[label as usize])?);
            }
            let stacked = tape.concat(&losses, 0)?;
            let loss = tape.mean(stacked)?;
            let grads = tape.backward(loss)?;
            adam.begin_step();
            for ((name, tensor), (_, id)) in probe
                .named_tensors_mut("probe")
                .iter_mut()
                .zip(binding.named_ids("probe").iter())
            {
                if let Some(g) = grads.get(*id) {
                    adam.update(name, cfg.probe_learning_rate, tensor.data_mut(), g);
                }
            }
        }
    }

    // Balanced, type-weighted held-out accuracy. Plain instance accuracy
    // would be dominated by the handful of very frequent held-out types, so
    // each type contributes its own accuracy once, types average within
    // their class, and the two class scores average to the final number.
    // Chance level is 0.5 regardless of imbalance.
    let mut per_type_hits: std::collections::HashMap<u32, (usize, usize)> =
        std::collections::HashMap::new();
    let mut tape = Tape::new();
    let binding = probe.bind(&mut tape, false);
    for &i in &hold_idx {
        let e = &embeddings[i];
        let x = tape.constant(vec![1, dim], e.values.clone())?;
        let logits = binding.logits(&mut tape, x)?;
        let out = tape.data(logits);
        let pred = u8::from(out[1] > out[0]);
        let entry = per_type_hits.entry(e.token_id).or_insert((0, 0));
        entry.1 += 1;
        if pred == labels[e.token_id as usize] {
            entry.0 += 1;
        }
    }
    let mut class_sum = [0.0f64; 2];
    let mut class_types = [0usize; 2];
    for (token_id, (hits, total)) in &per_type_hits {
        let class = labels[*token_id as usize] as usize;
        class_sum[class] += *hits as f64 / *total as f64;
        class_types[class] += 1;
    }
    let class_acc = |c: usize| class_sum[c] / class_types[c] as f64;
    let accuracy = match (class_types[0] > 0, class_types[1] > 0) {
        (true, true) => (class_acc(0) + class_acc(1)) / 2.0,
        (true, false) => class_acc(0),
        (false, true) => class_acc(1),
        (false, false) => unreachable!("holdout checked nonempty"),
    };
    Ok(ProbeOutcome { accuracy, train_items: train_idx.len(), holdout_items: hold_idx.len() })
}

/// Full diagnostics: encode a seeded corpus sample, compute cosine/norm
/// statistics per frequency band, and train the frequency probe.
pub fn anisotropy_report(
    encoder: &EncoderParams,
    corpus: &[Vec<u32>],
    freq: &FrequencyTable,
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsReport, DiagError> {
    if corpus.is_empty() {
        return Err(DiagError::EmptySample);
    }
    let embeddings = collect_token_embeddings(encoder, corpus, cfg.sample_size, cfg.seed)?;
    let stats = embedding_statistics(&embeddings, freq.labels(), cfg.pair_sample, cfg.seed)?;
    let probe = train_frequency_probe(&embeddings, freq.labels(), cfg)?;
    let band_separation =
        ((stats.within_high_cosine + stats.within_low_cosine) / 2.0 - stats.cross_band_cosine)
            .abs();
    Ok(DiagnosticsReport {
        mean_pairwise_cosine: stats.mean_pairwise_cosine,
        mean_norm_high_freq: stats.mean_norm_high_freq,
        mean_norm_low_freq: stats.mean_norm_low_freq,
        within_high_cosine: stats.within_high_cosine,
        within_low_cosine: stats.within_low_cosine,
        cross_band_cosine: stats.cross_band_cosine,
        band_separation,
        probe_accuracy: probe.accuracy,
        token_sample: embeddings.len(),
        pair_sample: stats.pair_sample,
        probe_train: probe.train_items,
        probe_holdout: probe.holdout_items,
    })
}

// ---- embedding export -----------------------------------------------------

/// Centers the data and extracts the top-2 principal directions by power
/// iteration with deflation. Returns (mean, [v1, v2]).
pub fn principal_directions_2d(data: &[Vec<f64>], seed: u64) -> Option<(Vec<f64>, [Vec<f64>; 2])> {
    if data.len() < 2 {
        return None;
    }
    let d = data[0].len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v / n;
        }
    }
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|row| row.iter().zip(mean.iter()).map(|(v, m)| v - m).collect())
        .collect();

    let cov_apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for row in &centered {
            let dot: f64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (o, r) in out.iter_mut().zip(row.iter()) {
                *o += dot * r / n;
            }
        }
        out
    };
    let normalize = |v: &mut Vec<f64>| -> f64 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        norm
    };

    let mut rng = stream(seed, &[0x9ca]);
    let mut directions: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    for c in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize(&mut v);
        for _ in 0..300 {
            let mut next = cov_apply(&v);
            // Deflate against previously found directions.
            for prev in directions.iter().take(c) {
                let dot: f64 = next.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
                for (nx, p) in next.iter_mut().zip(prev.iter()) {
                    *nx -= dot * p;
                }
            }
            if normalize(&mut next) <= 1e-300 {
                // Degenerate direction (zero variance); keep the previous v.
                break;
            }
            v = next;
        }
        directions[c] = v;
    }
    Some((mean, directions))
}

fn project_2d(values: &[f64], mean: &[f64], dirs: &[Vec<f64>; 2]) -> (f64, f64) {
    let centered: Vec<f64> = values.iter().zip(mean.iter()).map(|(v, m)| v - m).collect();
    let x = centered.iter().zip(dirs[0].iter()).map(|(a, b)| a * b).sum();
    let y = centered.iter().zip(dirs[1].iter()).map(|(a, b)| a * b).sum();
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportPaths {
    pub tokens: PathBuf,
    pub sentences: PathBuf,
}

/// Writes `tokens.tsv` and `sentences.tsv` under `out_dir`.
///
/// Layout: header `id<TAB>label<TAB>dim_0..dim_{D-1}` (plus `proj_x`,
/// `proj_y` when projecting). Token rows are identified as
/// `s{sentence}:p{position}:{token}` with their frequency label; sentence
/// rows as `s{sentence}` with label -1. Deterministic given the seed.
pub fn export_embeddings(
    encoder: &EncoderParams,
    vocab: &Vocabulary,
    freq: &FrequencyTable,
    corpus: &[Vec<u32>],
    sample_size: usize,
    out_dir: &Path,
    project: bool,
    seed: u64,
) -> Result<ExportPaths, DiagError> {
    if corpus.is_empty() {
        return Err(DiagError::EmptySample);
    }
    fs::create_dir_all(out_dir)?;
    let d = encoder.config.dim;

    let tokens = collect_token_embeddings(encoder, corpus, sample_size, seed)?;

    let indices = sample_indices(corpus.len(), sample_size, seed);
    let mut sentence_rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(ENCODE_BATCH) {
        let batch: Vec<Vec<u32>> = chunk.iter().map(|&i| corpus[i].clone()).collect();
        let mut tape = Tape::new();
        let binding = encoder.bind(&mut tape, false);
        let enc = encode(&mut tape, &binding, &batch, &EncodeOptions::default())?;
        let pooled = sentence_embedding(&mut tape, &enc)?;
        for (&sentence_idx, &id) in chunk.iter().zip(pooled.iter()) {
            sentence_rows.push((sentence_idx, tape.data(id).to_vec()));
        }
    }

    let header = |out: &mut String, with_proj: bool| {
        out.push_str("id\tlabel");
        for i in 0..d {
            out.push_str(&format!("\tdim_{}", i));
        }
        if with_proj {
            out.push_str("\tproj_x\tproj_y");
        }
        out.push('\n');
    };

    let token_proj = if project {
        let data: Vec<Vec<f64>> = tokens.iter().map(|t| t.values.clone()).collect();
        principal_directions_2d(&data, seed)
    } else {
        None
    };
    let mut token_text = String::new();
    header(&mut token_text, token_proj.is_some());
    for t in &tokens {
        let token_str = vocab.token(t.token_id).unwrap_or("?");
        token_text.push_str(&format!(
            "s{}:p{}:{}\t{}",
            t.sentence,
            t.position,
            token_str,
            freq.label(t.token_id)
        ));
        for v in &t.values {
            token_text.push_str(&format!("\t{}", v));
        }
        if let Some((mean, dirs)) = &token_proj {
            let (x, y) = project_2d(&t.values, mean, dirs);
            token_text.push_str(&format!("\t{}\t{}", x, y));
        }
        token_text.push('\n');
    }

    let sentence_proj = if project {
        let data: Vec<Vec<f64>> = sentence_rows.iter().map(|(_, v)| v.clone()).collect();
        principal_directions_2d(&data, seed)
    } else {
        None
    };
    let mut sentence_text = String::new();
    header(&mut sentence_text, sentence_proj.is_some());
    for (idx, values) in &sentence_rows {
        sentence_text.push_str(&format!("s{}\t-1", idx));
        for v in values {
            sentence_text.push_str(&format!("\t{}", v));
        }
        if let Some((mean, dirs)) = &sentence_proj {
            let (x, y) = project_2d(values, mean, dirs);
            sentence_text.push_str(&format!("\t{}\t{}", x, y));
        }
        sentence_text.push('\n');
    }

    let token_path = out_dir.join("tokens.tsv");
    let sentence_path = out_dir.join("sentences.tsv");
    fs::File::create(&token_path)?.write_all(token_text.as_bytes())?;
    fs::File::create(&sentence_path)?.write_all(sentence_text.as_bytes())?;
    Ok(ExportPaths { tokens: token_path, sentences: sentence_path })
}

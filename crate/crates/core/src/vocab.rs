//! Corpus ingestion, tokenization, frequency counting, and thresholded
//! frequency-label assignment.
//!
//! Tokenization is deliberately simple: lowercase, split on whitespace, and
//! treat every punctuation character as its own token. The labeling interface
//! is corpus-agnostic — counts can come from [`build_vocabulary`] or from a
//! precomputed count file in the documented TSV format.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Debug)]
pub enum VocabError {
    /// The corpus contained no usable sentences.
    EmptyCorpus,
    /// The label rate must lie strictly inside (0, 1).
    InvalidLambda(f64),
    /// Label assignment needs at least one content token with a count.
    EmptyCounts,
    Io(io::Error),
    Parse { line: usize, detail: String },
}

impl fmt::Display for VocabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VocabError::EmptyCorpus => write!(f, "empty corpus"),
            VocabError::InvalidLambda(l) => write!(f, "label rate {} outside (0, 1)", l),
            VocabError::EmptyCounts => write!(f, "no content token counts to label"),
            VocabError::Io(e) => write!(f, "i/o error: {}", e),
            VocabError::Parse { line, detail } => write!(f, "parse error at line {}: {}", line, detail),
        }
    }
}

impl std::error::Error for VocabError {}

impl From<io::Error> for VocabError {
    fn from(e: io::Error) -> Self {
        VocabError::Io(e)
    }
}

/// Token/id bijection with the five reserved special tokens at ids 0-4.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens in the given id order.
    /// Special-token names are skipped if present.
    pub fn with_content_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, u32> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for token in tokens {
            if token_to_id.contains_key(&token) {
                continue;
            }
            let id = id_to_token.len() as u32;
            token_to_id.insert(token.clone(), id);
            id_to_token.push(token);
        }
        Vocabulary { token_to_id, id_to_token }
    }

    /// Token id, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    /// Number of non-special entries.
    pub fn content_len(&self) -> usize {
        self.id_to_token.len() - SPECIAL_TOKENS.len()
    }

    pub fn is_special(id: u32) -> bool {
        id < SPECIAL_TOKENS.len() as u32
    }

    /// Content token ids in ascending order.
    pub fn content_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (SPECIAL_TOKENS.len() as u32)..(self.id_to_token.len() as u32)
    }
}

/// Per-token corpus counts and thresholded frequency labels, indexed by id.
/// Label 0 marks high-frequency tokens, label 1 low-frequency ones.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    labels: Vec<u8>,
    lambda: f64,
}

impl FrequencyTable {
    pub fn new(vocab: &Vocabulary, counts: Vec<u64>, labels: Vec<u8>, lambda: f64) -> Self {
        assert_eq!(counts.len(), vocab.len());
        assert_eq!(labels.len(), vocab.len());
        FrequencyTable { counts, labels, lambda }
    }

    /// Assembles the table from token-keyed counts by labeling them at rate
    /// `lambda`. Specials get count 0 and label 0.
    pub fn build(
        vocab: &Vocabulary,
        counts: &HashMap<String, u64>,
        lambda: f64,
        mode: QuantileMode,
    ) -> Result<Self, VocabError> {
        let label_map = assign_frequency_labels(counts, lambda, mode)?;
        let mut count_by_id = vec![0u64; vocab.len()];
        let mut label_by_id = vec![0u8; vocab.len()];
        for id in vocab.content_ids() {
            let token = vocab.token(id).expect("content id in range");
            count_by_id[id as usize] = counts.get(token).copied().unwrap_or(0);
            label_by_id[id as usize] = label_map.get(token).copied().unwrap_or(0);
        }
        Ok(FrequencyTable { counts: count_by_id, labels: label_by_id, lambda })
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn label(&self, id: u32) -> u8 {
        self.labels[id as usize]
    }

    /// Labels indexed by token id; specials are always 0.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Whether the label rate cuts vocabulary types or corpus token mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileMode {
    /// Label the lowest-count ceil(lambda * V) vocabulary types (default).
    Types,
    /// Label ascending-count types until they cover lambda of corpus tokens.
    TokenMass,
}

/// Lowercase, split on whitespace, and split punctuation into single-char
/// tokens. `"A man runs."` becomes `["a", "man", "runs", "."]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Result of a corpus scan: the capped vocabulary, occurrence counts of the
/// retained content tokens, and the number of undecodable lines skipped.
#[derive(Debug)]
pub struct VocabBuild {
    pub vocabulary: Vocabulary,
    pub counts: HashMap<String, u64>,
    pub skipped_lines: usize,
}

/// Scans a corpus (UTF-8, one sentence per line), counts normalized tokens,
/// and keeps the `max_vocab` most frequent with count >= `min_count`.
/// Undecodable lines are skipped and reported in the result.
pub fn build_vocabulary<R: BufRead>(
    reader: R,
    min_count: u64,
    max_vocab: usize,
) -> Result<VocabBuild, VocabError> {
    let mut raw_counts: HashMap<String, u64> = HashMap::new();
    let mut any_line = false;
    let mut skipped_lines = 0usize;
    for line in reader.lines() {
        match line {
            Ok(line) => {
                if line.trim().is_empty() {
                    continue;
                }
                any_line = true;
                for token in tokenize(&line) {
                    *raw_counts.entry(token).or_insert(0) += 1;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                skipped_lines += 1;
            }
            Err(e) => return Err(VocabError::Io(e)),
        }
    }
    if !any_line || raw_counts.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }

    let mut ranked: Vec<(String, u64)> =
        raw_counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    // Descending count, ties broken by ascending token for determinism.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_vocab);

    let vocabulary = Vocabulary::with_content_tokens(ranked.iter().map(|(t, _)| t.clone()));
    let counts = ranked.into_iter().collect();
    Ok(VocabBuild { vocabulary, counts, skipped_lines })
}

/// Assigns thresholded frequency labels: tokens sorted by ascending count
/// (ties broken lexicographically) and the lowest-frequency quantile labeled
/// 1. Special tokens are excluded and implicitly labeled 0.
pub fn assign_frequency_labels(
    counts: &HashMap<String, u64>,
    lambda: f64,
    mode: QuantileMode,
) -> Result<HashMap<String, u8>, VocabError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(VocabError::InvalidLambda(lambda));
    }
    let mut entries: Vec<(&str, u64)> = counts
        .iter()
        .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
        .map(|(t, c)| (t.as_str(), *c))
        .collect();
    if entries.is_empty() {
        return Err(VocabError::EmptyCounts);
    }
    entries.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let low_count = match mode {
        QuantileMode::Types => (lambda * entries.len() as f64).ceil() as usize,
        QuantileMode::TokenMass => {
            let total: u64 = entries.iter().map(|(_, c)| c).sum();
            let target = lambda * total as f64;
            let mut mass = 0u64;
            let mut k = 0usize;
            for (_, c) in &entries {
                if (mass as f64) >= target {
                    break;
                }
                mass += c;
                k += 1;
            }
            k
        }
    };

    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(rank, (token, _))| (token.to_string(), u8::from(rank < low_count)))
        .collect())
}

/// Tokenizes and maps to ids with `[UNK]` fallback, wrapped in `[CLS]`/`[SEP]`.
pub fn encode_sentence(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = vec![CLS_ID];
    ids.extend(tokenize(text).iter().map(|t| vocab.id(t)));
    ids.push(SEP_ID);
    ids
}

/// Maps ids back to token strings, dropping the structural specials
/// (`[PAD]`, `[CLS]`, `[SEP]`). `[UNK]` and `[MASK]` stay visible.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .filter(|&&id| id != PAD_ID && id != CLS_ID && id != SEP_ID)
        .filter_map(|&id| vocab.token(id))
        .map(|t| t.to_string())
        .collect()
}

// ---- file formats -------------------------------------------------------
//
// Vocab file:  `token<TAB>id`, ordered by id, specials included.
// Count file:  `token<TAB>count`, descending count, ties by token; content only.
// Label file:  `token<TAB>label`, ascending token; content only.

pub fn write_vocab_file(path: &Path, vocab: &Vocabulary) -> Result<(), VocabError> {
    let mut out = String::new();
    for id in 0..vocab.len() as u32 {
        out.push_str(vocab.token(id).expect("dense ids"));
        out.push('\t');
        out.push_str(&id.to_string());
        out.push('\n');
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_vocab_file(path: &Path) -> Result<Vocabulary, VocabError> {
    let reader = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (token, id) = split_tsv_pair(&line, lineno + 1)?;
        let id: u32 = id.parse().map_err(|_| VocabError::Parse {
            line: lineno + 1,
            detail: format!("bad id `{}`", id),
        })?;
        if (id as usize) < SPECIAL_TOKENS.len() {
            if SPECIAL_TOKENS[id as usize] != token {
                return Err(VocabError::Parse {
                    line: lineno + 1,
                    detail: format!("special id {} must be `{}`", id, SPECIAL_TOKENS[id as usize]),
                });
            }
            continue;
        }
        tokens.push((id, token.to_string()));
    }
    tokens.sort_by_key(|(id, _)| *id);
    Ok(Vocabulary::with_content_tokens(tokens.into_iter().map(|(_, t)| t)))
}

pub fn write_count_file(path: &Path, counts: &HashMap<String, u64>) -> Result<(), VocabError> {
    let mut entries: Vec<(&String, &u64)> = counts
        .iter()
        .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = String::new();
    for (token, count) in entries {
        out.push_str(token);
        out.push('\t');
        out.push_str(&count.to_string());
        out.push('\n');
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_count_file(path: &Path) -> Result<HashMap<String, u64>, VocabError> {
    let reader = BufReader::new(File::open(path)?);
    let mut counts = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (token, count) = split_tsv_pair(&line, lineno + 1)?;
        let count: u64 = count.parse().map_err(|_| VocabError::Parse {
            line: lineno + 1,
            detail: format!("bad count `{}`", count),
        })?;
        counts.insert(token.to_string(), count);
    }
    Ok(counts)
}

pub fn write_label_file(path: &Path, labels: &HashMap<String, u8>) -> Result<(), VocabError> {
    let mut entries: Vec<(&String, &u8)> = labels.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = String::new();
    for (token, label) in entries {
        out.push_str(token);
        out.push('\t');
        out.push_str(&label.to_string());
        out.push('\n');
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_label_file(path: &Path) -> Result<HashMap<String, u8>, VocabError> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (token, label) = split_tsv_pair(&line, lineno + 1)?;
        let label: u8 = label.parse().map_err(|_| VocabError::Parse {
            line: lineno + 1,
            detail: format!("bad label `{}`", label),
        })?;
        if label > 1 {
            return Err(VocabError::Parse {
                line: lineno + 1,
                detail: format!("label must be 0 or 1, got {}", label),
            });
        }
        labels.insert(token.to_string(), label);
    }
    Ok(labels)
}

fn split_tsv_pair(line: &str, lineno: usize) -> Result<(&str, &str), VocabError> {
    line.split_once('\t').ok_or_else(|| VocabError::Parse {
        line: lineno,
        detail: "expected two tab-separated fields".to_string(),
    })
}

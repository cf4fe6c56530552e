//! Shared test support: a central finite-difference gradient harness and a
//! generated template corpus with a Zipf-like frequency profile.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use freqsent_core::tape::{Tape, TensorId};
use freqsent_core::tensor::Tensor;
use freqsent_core::vocab::{
    assign_frequency_labels, build_vocabulary, encode_sentence, FrequencyTable, QuantileMode,
    Vocabulary,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Absolute floor below which gradients are compared additively.
pub const FD_FLOOR: f64 = 1e-7;

/// Relative-error acceptance for a gradient pair.
pub fn grad_close(analytic: f64, numeric: f64, tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_FLOOR || diff <= tol * analytic.abs().max(numeric.abs())
}

/// Checks analytic gradients of `build` (a scalar-valued graph over the
/// given leaves) against central finite differences, leaf by leaf.
///
/// `signs[i]` is the expected ratio analytic/numeric for leaf `i`: +1 for
/// ordinary paths, -1 for paths routed through the gradient reversal layer
/// (whose backward is deliberately the negation of the true derivative).
pub fn check_gradients_signed(
    name: &str,
    leaves: &[Tensor],
    signs: &[f64],
    build: &dyn Fn(&mut Tape, &[TensorId]) -> TensorId,
) {
    assert_eq!(leaves.len(), signs.len());

    // Analytic pass.
    let mut tape = Tape::with_strict(true);
    let ids: Vec<TensorId> =
        leaves.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).expect("backward");

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> =
            perturbed.iter().map(|t| tape.leaf(t.clone().with_requires_grad(false))).collect();
        let loss = build(&mut tape, &ids);
        tape.scalar_value(loss).expect("scalar loss")
    };

    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(ids[li])
            .unwrap_or_else(|| panic!("{name}: no gradient for leaf {li}"))
            .to_vec();
        for c in 0..leaf.numel() {
            let mut plus: Vec<Tensor> = leaves.to_vec();
            plus[li].data_mut()[c] += FD_STEP;
            let mut minus: Vec<Tensor> = leaves.to_vec();
            minus[li].data_mut()[c] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let expected = signs[li] * numeric;
            assert!(
                grad_close(analytic[c], expected, FD_TOL),
                "{name}: leaf {li} coord {c}: analytic {} vs numeric {} (sign {})",
                analytic[c],
                numeric,
                signs[li]
            );
        }
    }
}

pub fn check_gradients(
    name: &str,
    leaves: &[Tensor],
    build: &dyn Fn(&mut Tape, &[TensorId]) -> TensorId,
) {
    let signs = vec![1.0; leaves.len()];
    check_gradients_signed(name, leaves, &signs, build);
}

/// Random tensor with entries in [-2, 2], avoiding the region around zero
/// where relu's kink would invalidate finite differences.
pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

// ---- toy template corpus ----------------------------------------------------

const FUNCTION_WORDS: [&str; 12] =
    ["the", "a", "is", "was", "of", "to", "and", "in", "on", "it", "that", "with"];

const TEMPLATES: [&str; 6] = [
    "F C F C C",
    "C F C C",
    "F C C F C C",
    "C C F C",
    "F F C C C",
    "C F F C C F C",
];

/// Generates a template corpus: function-word slots draw from a small
/// high-frequency list, content slots from `content_vocab` synthetic words
/// under a Zipf(s=1.1) profile. With ~2000 sentences and ~490 content words
/// this yields a long-tailed count distribution.
pub fn toy_corpus(n_sentences: usize, content_vocab: usize, seed: u64) -> Vec<String> {
    let words: Vec<String> = (0..content_vocab).map(|i| format!("tok{:03}", i)).collect();
    // Zipf cumulative weights over ranks.
    let mut cumulative = Vec::with_capacity(content_vocab);
    let mut total = 0.0;
    for i in 0..content_vocab {
        total += 1.0 / ((i + 1) as f64).powf(1.1);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_content = |rng: &mut ChaCha8Rng| -> &str {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c < u).min(content_vocab - 1);
        &words[idx]
    };
    (0..n_sentences)
        .map(|_| {
            let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
            let mut sentence = Vec::new();
            for slot in template.split(' ') {
                match slot {
                    "F" => sentence.push(
                        FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())].to_string(),
                    ),
                    _ => sentence.push(draw_content(&mut rng).to_string()),
                }
            }
            sentence.join(" ")
        })
        .collect()
}

/// Corpus with no positional structure at all: every slot of every sentence
/// draws iid from one Zipf(s=1.1) distribution. Frequency is then
/// independent of position and context, which keeps probe baselines honest.
pub fn unstructured_zipf_corpus(n_sentences: usize, vocab: usize, seed: u64) -> Vec<String> {
    let words: Vec<String> = (0..vocab).map(|i| format!("tok{:03}", i)).collect();
    let mut cumulative = Vec::with_capacity(vocab);
    let mut total = 0.0;
    for i in 0..vocab {
        total += 1.0 / ((i + 1) as f64).powf(1.1);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sentences)
        .map(|_| {
            let len = rng.random_range(4..=8);
            (0..len)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * total;
                    let idx = cumulative.partition_point(|&c| c < u).min(vocab - 1);
                    words[idx].clone()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Builds vocabulary, frequency labels, and encoded sentences from corpus
/// lines.
pub fn prepare_corpus(
    lines: &[String],
    lambda: f64,
) -> (Vocabulary, FrequencyTable, Vec<Vec<u32>>) {
    let text = lines.join("\n");
    let build = build_vocabulary(std::io::Cursor::new(text), 1, usize::MAX).unwrap();
    let freq =
        FrequencyTable::build(&build.vocabulary, &build.counts, lambda, QuantileMode::Types)
            .unwrap();
    let encoded: Vec<Vec<u32>> =
        lines.iter().map(|l| encode_sentence(l, &build.vocabulary)).collect();
    (build.vocabulary, freq, encoded)
}

/// Independent token counting oracle for vocabulary tests.
pub fn count_oracle(lines: &[String]) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for line in lines {
        for token in freqsent_core::vocab::tokenize(line) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    counts
}

/// Exercises the labeling pipeline against arbitrary synthetic count tables.
pub fn random_count_table(n: usize, rng: &mut ChaCha8Rng) -> HashMap<String, u64> {
    (0..n).map(|i| (format!("w{:04}", i), rng.random_range(1..10_000u64))).collect()
}

pub fn label_count_invariants(counts: &HashMap<String, u64>, lambda: f64) {
    let labels = assign_frequency_labels(counts, lambda, QuantileMode::Types).unwrap();
    let v = counts.len();
    let expected = (lambda * v as f64).ceil() as usize;
    let low = labels.values().filter(|&&l| l == 1).count();
    assert_eq!(low, expected, "lambda {} over {} types", lambda, v);
    // Threshold monotonicity: no label-1 token outcounts any label-0 token.
    let max_low = counts
        .iter()
        .filter(|(t, _)| labels[*t] == 1)
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    let min_high = counts
        .iter()
        .filter(|(t, _)| labels[*t] == 0)
        .map(|(_, &c)| c)
        .min()
        .unwrap_or(u64::MAX);
    assert!(
        max_low <= min_high,
        "label-1 count {} exceeds label-0 count {}",
        max_low,
        min_high
    );
}

//! Acceptance suite. Each test covers one release criterion at its stated
//! tolerance and prints a pass line; run with `--nocapture` to see them:
//!
//! ```text
//! cargo test -p freqsent-core --test acceptance -- --nocapture
//! ```
//!
//! 1. Gradient correctness of every primitive and all three losses.
//! 2. The gradient-reversal contract, end to end through the encoder.
//! 3. Loss values against brute-force oracles.
//! 4. Spearman against the closed-form rank formula.
//! 5. Frequency labeling quantile and monotonicity invariants.
//! 6. Incomplete-sentence masking statistics.
//! 7. Directional adversarial effect on a toy corpus.
//! 8. Bitwise determinism and checkpoint-resume equivalence.

mod common;

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use freqsent_core::augment::{make_incomplete, MaskStyle};
use freqsent_core::checkpoint::load_checkpoint;
use freqsent_core::diag::{anisotropy_report, DiagnosticsConfig};
use freqsent_core::encoder::{encode, EncodeOptions, EncoderConfig, EncodedBatch, EncoderParams};
use freqsent_core::eval::spearman;
use freqsent_core::objectives::{
    adversarial_loss, contrastive_loss, isf_loss, ContrastiveOptions, DiscriminatorBinding,
    DiscriminatorParams,
};
use freqsent_core::tape::Tape;
use freqsent_core::tensor::Tensor;
use freqsent_core::trainer::{train, Backbone, Model, TrainConfig, TrainRun};
use freqsent_core::vocab::{CLS_ID, MASK_ID, SEP_ID};

use common::{check_gradients, check_gradients_signed, random_tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- criterion 1 -------------------------------------------------------------

#[test]
fn acceptance_1_gradient_correctness() {
    let start = Instant::now();
    let mut r = rng(101);

    // Every primitive, finite differences at step 1e-5, rel err < 1e-4.
    let a23 = random_tensor(vec![2, 3], &mut r);
    let b34 = random_tensor(vec![3, 4], &mut r);
    check_gradients("matmul", &[a23.clone(), b34], &|t, ids| {
        let y = t.matmul(ids[0], ids[1]).unwrap();
        reduce(t, y)
    });
    let b43 = random_tensor(vec![4, 3], &mut r);
    check_gradients("matmul_bt", &[a23.clone(), b43], &|t, ids| {
        let y = t.matmul_bt(ids[0], ids[1]).unwrap();
        reduce(t, y)
    });
    let same = random_tensor(vec![2, 3], &mut r);
    let row = random_tensor(vec![3], &mut r);
    check_gradients("add", &[a23.clone(), same.clone()], &|t, ids| {
        let y = t.add(ids[0], ids[1]).unwrap();
        reduce(t, y)
    });
    check_gradients("add_broadcast", &[a23.clone(), row.clone()], &|t, ids| {
        let y = t.add(ids[0], ids[1]).unwrap();
        reduce(t, y)
    });
    check_gradients("multiply", &[a23.clone(), same], &|t, ids| {
        let y = t.multiply(ids[0], ids[1]).unwrap();
        reduce(t, y)
    });
    check_gradients("multiply_broadcast", &[a23.clone(), row], &|t, ids| {
        let y = t.multiply(ids[0], ids[1]).unwrap();
        reduce(t, y)
    });
    check_gradients("relu", &[random_tensor(vec![3, 3], &mut r)], &|t, ids| {
        let y = t.relu(ids[0]).unwrap();
        reduce(t, y)
    });
    check_gradients("softmax", &[random_tensor(vec![2, 5], &mut r)], &|t, ids| {
        let y = t.softmax(ids[0]).unwrap();
        reduce(t, y)
    });
    let x35 = random_tensor(vec![3, 5], &mut r);
    let scale5 = random_tensor(vec![5], &mut r);
    let shift5 = random_tensor(vec![5], &mut r);
    check_gradients("layer_norm", &[x35, scale5, shift5], &|t, ids| {
        let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-12).unwrap();
        reduce(t, y)
    });
    check_gradients("dropout", &[random_tensor(vec![4, 4], &mut r)], &|t, ids| {
        let y = t.dropout(ids[0], 0.25, 777).unwrap();
        reduce(t, y)
    });
    check_gradients("embedding_lookup", &[random_tensor(vec![6, 4], &mut r)], &|t, ids| {
        let y = t.embedding_lookup(ids[0], &[1, 5, 1, 0]).unwrap();
        reduce(t, y)
    });
    let c1 = random_tensor(vec![2, 2], &mut r);
    let c2 = random_tensor(vec![2, 3], &mut r);
    check_gradients("concat", &[c1, c2], &|t, ids| {
        let y = t.concat(&[ids[0], ids[1]], 1).unwrap();
        reduce(t, y)
    });
    check_gradients("slice", &[random_tensor(vec![3, 6], &mut r)], &|t, ids| {
        let y = t.slice(ids[0], 1, 1, 4).unwrap();
        reduce(t, y)
    });
    check_gradients("mean", &[random_tensor(vec![6], &mut r)], &|t, ids| {
        t.mean(ids[0]).unwrap()
    });
    check_gradients("scale", &[random_tensor(vec![5], &mut r)], &|t, ids| {
        let y = t.scale(ids[0], 2.5).unwrap();
        reduce(t, y)
    });
    check_gradients_signed("grl", &[random_tensor(vec![4], &mut r)], &[-1.0], &|t, ids| {
        let y = t.grl(ids[0]).unwrap();
        reduce(t, y)
    });
    let v1 = random_tensor(vec![6], &mut r);
    let v2 = random_tensor(vec![6], &mut r);
    check_gradients("cosine_similarity", &[v1, v2], &|t, ids| {
        t.cosine_similarity(ids[0], ids[1]).unwrap()
    });
    check_gradients("cross_entropy", &[random_tensor(vec![4], &mut r)], &|t, ids| {
        t.cross_entropy(ids[0], 1).unwrap()
    });

    // The three losses at D = 8, B = 3.
    let views: Vec<Tensor> = (0..6).map(|_| random_tensor(vec![1, 8], &mut r)).collect();
    check_gradients("contrastive_loss", &views, &|t, ids| {
        contrastive_loss(t, &ids[0..3], &ids[3..6], &ContrastiveOptions::default()).unwrap()
    });

    let disc = DiscriminatorParams::init(8, 8, 102);
    let mut isf_leaves: Vec<Tensor> =
        (0..6).map(|_| random_tensor(vec![1, 8], &mut r)).collect();
    isf_leaves.extend([disc.w1.clone(), disc.b1.clone(), disc.w2.clone(), disc.b2.clone()]);
    check_gradients("isf_loss", &isf_leaves, &|t, ids| {
        let binding = DiscriminatorBinding { w1: ids[6], b1: ids[7], w2: ids[8], b2: ids[9] };
        isf_loss(t, &ids[0..3], &ids[3..6], &[true, true, true], &binding).unwrap()
    });

    let h: Vec<Tensor> = (0..3).map(|_| random_tensor(vec![4, 8], &mut r)).collect();
    let adv_leaves = vec![
        h[0].clone(),
        h[1].clone(),
        h[2].clone(),
        disc.w1.clone(),
        disc.b1.clone(),
        disc.w2.clone(),
        disc.b2.clone(),
    ];
    check_gradients_signed(
        "adversarial_loss",
        &adv_leaves,
        &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0],
        &|t, ids| {
            let batch = EncodedBatch {
                h: vec![ids[0], ids[1], ids[2]],
                tokens: vec![
                    vec![CLS_ID, 5, 6, SEP_ID],
                    vec![CLS_ID, 7, 8, SEP_ID],
                    vec![CLS_ID, 6, 9, SEP_ID],
                ],
                seq_len: 4,
                heads: 1,
                attention: None,
            };
            let binding =
                DiscriminatorBinding { w1: ids[3], b1: ids[4], w2: ids[5], b2: ids[6] };
            let labels = [0u8, 0, 0, 0, 0, 0, 1, 0, 1, 1];
            adversarial_loss(t, &batch, &labels, &binding, true).unwrap()
        },
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient checks took {:?}, over the 1-minute budget", elapsed);
    println!("ACCEPTANCE 1 gradient-correctness: PASS ({:?})", elapsed);
}

fn reduce(tape: &mut Tape, x: freqsent_core::tape::TensorId) -> freqsent_core::tape::TensorId {
    let shape = tape.shape(x).to_vec();
    let numel: usize = shape.iter().product();
    let weights: Vec<f64> = (0..numel).map(|i| 0.4 + 0.13 * i as f64).collect();
    let w = tape.constant(shape, weights).unwrap();
    let prod = tape.multiply(x, w).unwrap();
    let m = tape.mean(prod).unwrap();
    tape.scale(m, numel as f64).unwrap()
}

// ---- criterion 2 -------------------------------------------------------------

#[test]
fn acceptance_2_gradient_reversal_contract() {
    // Forward is bit-identical; backward is exact negation.
    let values = vec![1.5, -2.0, 0.0, 3.25e-7, -1e12];
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(values.clone()).with_requires_grad(true));
    let y = tape.grl(x).unwrap();
    for (a, b) in tape.data(y).iter().zip(values.iter()) {
        assert_eq!(a.to_bits(), b.to_bits(), "grl forward must be bitwise identity");
    }
    let c = tape.leaf(Tensor::from_vec(vec![2.0, -3.0, 4.0, 5.0, -6.0]));
    let prod = tape.multiply(y, c).unwrap();
    let loss = tape.mean(prod).unwrap();
    let g_with = tape.backward(loss).unwrap().get(x).unwrap().to_vec();

    let mut tape2 = Tape::new();
    let x2 = tape2.leaf(Tensor::from_vec(values).with_requires_grad(true));
    let c2 = tape2.leaf(Tensor::from_vec(vec![2.0, -3.0, 4.0, 5.0, -6.0]));
    let prod2 = tape2.multiply(x2, c2).unwrap();
    let loss2 = tape2.mean(prod2).unwrap();
    let g_without = tape2.backward(loss2).unwrap().get(x2).unwrap().to_vec();
    for (w, wo) in g_with.iter().zip(g_without.iter()) {
        assert_eq!(*w, -*wo, "grl backward must be the exact negation");
    }

    // Encoder-side gradient of the adversarial loss equals minus the same
    // gradient computed without grl, through a real two-layer encoder.
    let config = EncoderConfig {
        vocab_size: 12,
        dim: 8,
        layers: 2,
        heads: 2,
        ffn_dim: 16,
        max_len: 8,
        dropout: 0.0,
    };
    let params = EncoderParams::init(config, 201);
    let disc = DiscriminatorParams::init(8, 8, 202);
    let batch = vec![vec![CLS_ID, 5, 6, 7, SEP_ID], vec![CLS_ID, 8, 9, SEP_ID]];
    let labels = [0u8, 0, 0, 0, 0, 0, 1, 0, 1, 1, 0, 1];

    let encoder_grads = |use_grl: bool| -> Vec<(String, Vec<f64>)> {
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape, true);
        let disc_binding = disc.bind(&mut tape, true);
        let enc = encode(&mut tape, &binding, &batch, &EncodeOptions::default()).unwrap();
        let loss = adversarial_loss(&mut tape, &enc, &labels, &disc_binding, use_grl).unwrap();
        let grads = tape.backward(loss).unwrap();
        binding
            .named_ids()
            .into_iter()
            .map(|(name, id)| {
                let g = grads.get(id).map(|g| g.to_vec()).unwrap_or_default();
                (name, g)
            })
            .collect()
    };
    let with = encoder_grads(true);
    let without = encoder_grads(false);
    let mut max_diff = 0.0f64;
    for ((name_a, ga), (name_b, gb)) in with.iter().zip(without.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(ga.len(), gb.len(), "{name_a}");
        for (a, b) in ga.iter().zip(gb.iter()) {
            max_diff = max_diff.max((a + b).abs());
        }
    }
    assert!(
        max_diff < 1e-12,
        "encoder gradient with grl is not the negation (max |g + g'| = {})",
        max_diff
    );
    println!("ACCEPTANCE 2 grl-contract: PASS (max |g + g'| = {:e})", max_diff);
}

// ---- criterion 3 -------------------------------------------------------------

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if a == b {
        1.0
    } else {
        dot / (na * nb)
    }
}

fn oracle_ce(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn oracle_disc(x: &[f64], disc: &DiscriminatorParams) -> Vec<f64> {
    let d = disc.w1.shape()[0];
    let h = disc.w1.shape()[1];
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut acc = disc.b1.data()[j];
        for i in 0..d {
            acc += x[i] * disc.w1.data()[i * h + j];
        }
        hidden[j] = acc.max(0.0);
    }
    let mut logits = vec![0.0; 2];
    for j in 0..2 {
        let mut acc = disc.b2.data()[j];
        for (i, &hv) in hidden.iter().enumerate() {
            acc += hv * disc.w2.data()[i * 2 + j];
        }
        logits[j] = acc;
    }
    logits
}

#[test]
fn acceptance_3_loss_oracles() {
    let mut r = rng(301);

    // cross_entropy([0, 0], .) = ln 2 within 1e-12.
    let mut tape = Tape::new();
    let uniform = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
    for label in 0..2 {
        let ce = tape.cross_entropy(uniform, label).unwrap();
        assert!((tape.scalar_value(ce).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    // Contrastive loss against a brute-force double loop at B <= 8, 1e-8,
    // under both denominator conventions.
    for b in 2..=8usize {
        let d = 7;
        let va: Vec<Vec<f64>> =
            (0..b).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let vb: Vec<Vec<f64>> =
            (0..b).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        for inclusive in [false, true] {
            let tau = 0.1;
            let mut oracle = 0.0;
            for i in 0..b {
                let num = (oracle_cos(&va[i], &vb[i]) / tau).exp();
                let mut den = if inclusive { num } else { 0.0 };
                for k in 0..b {
                    if k != i {
                        den += (oracle_cos(&va[i], &va[k]) / tau).exp();
                        den += (oracle_cos(&va[i], &vb[k]) / tau).exp();
                    }
                }
                oracle -= (num / den).ln();
            }
            oracle /= b as f64;

            let mut tape = Tape::new();
            let ids_a: Vec<_> =
                va.iter().map(|v| tape.constant(vec![1, d], v.clone()).unwrap()).collect();
            let ids_b: Vec<_> =
                vb.iter().map(|v| tape.constant(vec![1, d], v.clone()).unwrap()).collect();
            let loss = contrastive_loss(
                &mut tape,
                &ids_a,
                &ids_b,
                &ContrastiveOptions { temperature: tau, denominator_includes_positive: inclusive },
            )
            .unwrap();
            let got = tape.scalar_value(loss).unwrap();
            assert!(
                (got - oracle).abs() < 1e-8,
                "B={} inclusive={}: {} vs oracle {}",
                b,
                inclusive,
                got,
                oracle
            );
        }
    }

    // Filtering loss against a per-pair oracle, 1e-10.
    let disc = DiscriminatorParams::init(6, 6, 302);
    let b = 5;
    let h: Vec<Vec<f64>> =
        (0..b).map(|_| (0..6).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let hi: Vec<Vec<f64>> =
        (0..b).map(|_| (0..6).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let flags = [true, false, true, true, false];
    let mut oracle = 0.0;
    for i in 0..b {
        let mut term = oracle_ce(&oracle_disc(&h[i], &disc), 0);
        if flags[i] {
            term += oracle_ce(&oracle_disc(&hi[i], &disc), 1);
        }
        oracle += term;
    }
    oracle /= b as f64;
    let mut tape = Tape::new();
    let binding = disc.bind(&mut tape, false);
    let ids_h: Vec<_> = h.iter().map(|v| tape.constant(vec![1, 6], v.clone()).unwrap()).collect();
    let ids_i: Vec<_> = hi.iter().map(|v| tape.constant(vec![1, 6], v.clone()).unwrap()).collect();
    let loss = isf_loss(&mut tape, &ids_h, &ids_i, &flags, &binding).unwrap();
    let got = tape.scalar_value(loss).unwrap();
    assert!((got - oracle).abs() < 1e-10, "isf {} vs oracle {}", got, oracle);

    // Adversarial loss against a per-token oracle, 1e-10.
    let tokens = vec![
        vec![CLS_ID, 5, 6, 7, SEP_ID],
        vec![CLS_ID, 8, 9, SEP_ID, 0],
        vec![CLS_ID, 6, 6, 8, SEP_ID],
    ];
    let labels = [0u8, 0, 0, 0, 0, 0, 1, 0, 1, 1];
    let t = 5;
    let d = 6;
    let hs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..t * d).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let mut oracle = 0.0;
    for (s, ids) in tokens.iter().enumerate() {
        let mut sentence = 0.0;
        let mut count = 0;
        for (p, &id) in ids.iter().enumerate() {
            if id < 5 {
                continue; // specials carry no frequency label
            }
            let x = &hs[s][p * d..(p + 1) * d];
            sentence += oracle_ce(&oracle_disc(x, &disc), labels[id as usize] as usize);
            count += 1;
        }
        oracle += sentence / count as f64;
    }
    oracle /= 3.0;
    let mut tape = Tape::new();
    let binding = disc.bind(&mut tape, false);
    let ids_h: Vec<_> =
        hs.iter().map(|v| tape.constant(vec![t, d], v.clone()).unwrap()).collect();
    let batch = EncodedBatch {
        h: ids_h,
        tokens,
        seq_len: t,
        heads: 1,
        attention: None,
    };
    let loss = adversarial_loss(&mut tape, &batch, &labels, &binding, true).unwrap();
    let got = tape.scalar_value(loss).unwrap();
    assert!((got - oracle).abs() < 1e-10, "adversarial {} vs oracle {}", got, oracle);

    println!("ACCEPTANCE 3 loss-oracles: PASS");
}

// ---- criterion 4 -------------------------------------------------------------

#[test]
fn acceptance_4_spearman_oracle() {
    let mut r = rng(401);
    use rand::seq::SliceRandom;

    for trial in 0..1000 {
        let n = r.random_range(5..50usize);
        let mut x: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let mut y = x.clone();
        x.shuffle(&mut r);
        y.shuffle(&mut r);
        let rho = spearman(&x, &y).unwrap();
        let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let formula = 1.0 - 6.0 * d2 / (n as f64 * ((n * n - 1) as f64));
        assert!(
            (rho - formula).abs() < 1e-12,
            "trial {}: spearman {} vs formula {}",
            trial,
            rho,
            formula
        );
    }

    let increasing: Vec<f64> = (0..10).map(|i| (i as f64).exp()).collect();
    assert_eq!(spearman(&increasing, &increasing).unwrap(), 1.0);
    let reversed: Vec<f64> = increasing.iter().rev().cloned().collect();
    assert_eq!(spearman(&increasing, &reversed).unwrap(), -1.0);

    println!("ACCEPTANCE 4 spearman-oracle: PASS");
}

// ---- criterion 5 -------------------------------------------------------------

#[test]
fn acceptance_5_frequency_labeling() {
    let mut r = rng(501);
    for trial in 0..50 {
        let counts = common::random_count_table(10 + trial * 17 % 300, &mut r);
        for lambda in [0.1, 0.3, 0.5, 0.7, 0.9] {
            common::label_count_invariants(&counts, lambda);
        }
    }
    println!("ACCEPTANCE 5 frequency-labeling: PASS");
}

// ---- criterion 6 -------------------------------------------------------------

#[test]
fn acceptance_6_masking_statistics() {
    // Sentence with 5 low-frequency tokens among high-frequency and special
    // tokens; epsilon 0.2 over 10,000 seeded draws.
    let ids = vec![CLS_ID, 5, 6, 7, 5, 8, 9, 10, SEP_ID];
    let mut labels = vec![0u8; 11];
    for low in [6, 7, 8, 9, 10] {
        labels[low] = 1;
    }
    let low_positions = 5;

    let mut total_masked = 0usize;
    for seed in 0..10_000u64 {
        let inc = make_incomplete(&ids, &labels, 0.2, seed, MaskStyle::MaskToken).unwrap();
        total_masked += inc.mask_positions.len();
        assert!(inc.had_low_frequency);
        for (&orig, &masked) in inc.original.iter().zip(inc.masked.iter()) {
            if masked == MASK_ID {
                assert_eq!(labels[orig as usize], 1, "masked a label-0 token");
                assert!(orig >= 5, "masked a special token");
            }
        }
        assert_eq!(inc.masked[0], CLS_ID);
        assert_eq!(*inc.masked.last().unwrap(), SEP_ID);
    }
    let mean = total_masked as f64 / 10_000.0;
    // Expectation 1.0; three sigma of the mean is ~0.027, the stated band
    // is wider.
    assert!(
        (0.95..=1.05).contains(&mean),
        "mean masked count {} outside [0.95, 1.05] (expected 1.0 = {} * 0.2)",
        mean,
        low_positions
    );
    println!("ACCEPTANCE 6 masking-statistics: PASS (mean masked {:.4})", mean);
}

// ---- criterion 7 -------------------------------------------------------------

#[test]
fn acceptance_7_directional_adversarial_effect() {
    let start = Instant::now();
    let lines = common::toy_corpus(2000, 520, 7777);
    let (vocab, freq, corpus) = common::prepare_corpus(&lines, 0.5);
    assert!(
        (420..=540).contains(&vocab.content_len()),
        "toy corpus vocabulary {} strayed from ~500",
        vocab.content_len()
    );

    let base_config = || {
        let mut config =
            TrainConfig::new(EncoderConfig::small(vocab.len()), Backbone::Consert, 4242);
        config.batch_size = 32;
        config.epochs = 3;
        // Warm-up of 0.5 epochs out of 3.
        config.warmup_fraction = 0.5 / 3.0;
        config
    };

    let mut backbone_only = base_config();
    backbone_only.weights.alpha = 0.0;
    backbone_only.weights.beta = 0.0;

    let full = base_config(); // alpha = beta = 1, lambda = 0.5, epsilon = 0.2

    // The two runs are independent; train them in parallel.
    let outcome = std::thread::scope(|scope| {
        let handles = [&backbone_only, &full].map(|config| {
            let corpus = &corpus;
            let vocab = &vocab;
            let freq = &freq;
            scope.spawn(move || {
                let run = TrainRun { corpus, vocab, freq, config };
                train(&run, None, None, None).expect("training run")
            })
        });
        handles.map(|h| h.join().expect("training thread"))
    });
    let [plain, adversarial] = outcome;

    let diag_config = DiagnosticsConfig {
        sample_size: 320,
        pair_sample: 4000,
        seed: 24_68,
        probe_hidden: 64,
        probe_epochs: 30,
        probe_learning_rate: 1e-3,
        probe_batch: 64,
        holdout_fraction: 0.2,
    };
    let report_plain =
        anisotropy_report(&plain.model.encoder, &corpus, &freq, &diag_config).unwrap();
    let report_adv =
        anisotropy_report(&adversarial.model.encoder, &corpus, &freq, &diag_config).unwrap();

    println!(
        "ACCEPTANCE 7 detail: probe accuracy {:.4} -> {:.4}, band separation {:.4} -> {:.4} ({:?})",
        report_plain.probe_accuracy,
        report_adv.probe_accuracy,
        report_plain.band_separation,
        report_adv.band_separation,
        start.elapsed()
    );

    assert!(
        report_adv.probe_accuracy <= report_plain.probe_accuracy - 0.05,
        "frequency probe must lose at least 5 points under adversarial tuning: {} vs {}",
        report_plain.probe_accuracy,
        report_adv.probe_accuracy
    );
    assert!(
        report_adv.band_separation < report_plain.band_separation,
        "cross-band cosine gap must shrink: {} vs {}",
        report_plain.band_separation,
        report_adv.band_separation
    );
    println!("ACCEPTANCE 7 directional-adversarial-effect: PASS");
}

// ---- criterion 8 -------------------------------------------------------------

#[test]
fn acceptance_8_determinism_and_resume() {
    let lines = common::toy_corpus(64, 60, 801);
    let (vocab, freq, corpus) = common::prepare_corpus(&lines, 0.5);
    let mut config = TrainConfig::new(
        EncoderConfig {
            vocab_size: vocab.len(),
            dim: 16,
            layers: 1,
            heads: 2,
            ffn_dim: 32,
            max_len: 16,
            dropout: 0.1,
        },
        Backbone::Consert,
        802,
    );
    config.batch_size = 8;
    config.epochs = 2;
    config.checkpoint_every = 7;

    let run = TrainRun { corpus: &corpus, vocab: &vocab, freq: &freq, config: &config };

    let dir = tempfile::tempdir().unwrap();
    let mut trace_a = Vec::new();
    let a = train(&run, None, Some(&mut trace_a), Some(dir.path())).unwrap();
    let mut trace_b = Vec::new();
    let b = train(&run, None, Some(&mut trace_b), None).unwrap();
    assert_eq!(trace_a, trace_b, "identical configs must give identical loss traces");

    let mut pa = a.model.clone();
    let mut pb = b.model.clone();
    for ((name, ta), (_, tb)) in
        pa.named_tensors_mut().into_iter().zip(pb.named_tensors_mut())
    {
        assert_eq!(ta.data(), tb.data(), "parameter {} differs between reruns", name);
    }

    // Resume from the mid-run checkpoint; the continued trace must equal
    // the uninterrupted run's tail bit for bit.
    let ckpt = load_checkpoint(&dir.path().join("checkpoint_step000007.bin")).unwrap();
    let mut resumed_trace = Vec::new();
    let resumed = train(&run, Some(ckpt.into()), Some(&mut resumed_trace), None).unwrap();
    let full_text = String::from_utf8(trace_a).unwrap();
    let tail: Vec<&str> = full_text.lines().skip(1 + 7).collect();
    let resumed_text = String::from_utf8(resumed_trace).unwrap();
    assert_eq!(tail, resumed_text.lines().collect::<Vec<_>>());

    let mut pr = resumed.model.clone();
    let mut pf = a.model.clone();
    for ((name, tr), (_, tf)) in
        pr.named_tensors_mut().into_iter().zip(pf.named_tensors_mut())
    {
        assert_eq!(tr.data(), tf.data(), "resumed parameter {} differs", name);
    }
    println!("ACCEPTANCE 8 determinism-and-resume: PASS");
}

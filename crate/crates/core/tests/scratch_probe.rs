mod common;
use freqsent_core::diag::{collect_token_embeddings, DiagnosticsConfig};
use freqsent_core::encoder::EncoderConfig;
use freqsent_core::objectives::DiscriminatorParams;
use freqsent_core::optim::{Adam, AdamConfig};
use freqsent_core::rng::{derive_seed, stream};
use freqsent_core::tape::Tape;
use freqsent_core::trainer::{train, Backbone, Model, TrainConfig, TrainRun};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn register_corpus(n: usize, seed: u64) -> Vec<String> {
    const F_COMMON: [&str; 10] = ["the","a","is","was","of","to","and","in","on","it"];
    const F_RARE: [&str; 6] = ["quoth","ye","thus","ere","anon","hath"];
    const T: [&str; 6] = ["F C F C C","C F C C","F C C F C C","C C F C","F F C C C","C F F C C F C"];
    const HEAD: usize = 250;
    const TAIL: usize = 254;
    let head: Vec<String> = (0..HEAD).map(|i| format!("com{:03}", i)).collect();
    let tail: Vec<String> = (0..TAIL).map(|i| format!("rar{:03}", i)).collect();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for i in 0..HEAD { total += 1.0/((i+1) as f64).powf(0.7); cum.push(total); }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| {
        let specialized = rng.random::<f64>() < 0.25;
        let t = T[rng.random_range(0..T.len())];
        t.split(' ').map(|slot| match slot {
            "F" => if specialized { F_RARE[rng.random_range(0..F_RARE.len())].to_string() }
                   else { F_COMMON[rng.random_range(0..F_COMMON.len())].to_string() },
            _ => {
                if specialized && rng.random::<f64>() < 0.5 { tail[rng.random_range(0..TAIL)].clone() }
                else { let u: f64 = rng.random::<f64>()*total;
                       head[cum.partition_point(|&c| c < u).min(HEAD-1)].clone() }
            }
        }).collect::<Vec<_>>().join(" ")
    }).collect()
}

#[test]
fn dissect() {
    let lines = register_corpus(2000, 8888);
    let (vocab, freq, corpus) = common::prepare_corpus(&lines, 0.5);
    let labels = freq.labels();
    let cfg_t = {
        let mut c = TrainConfig::new(EncoderConfig::small(vocab.len()), Backbone::Consert, 4242);
        c.batch_size = 32; c.epochs = 3; c.warmup_fraction = 0.5/3.0; c.learning_rate = 1e-3;
        c.weights.alpha = 0.0; c.weights.beta = 0.0;
        c
    };
    let run = TrainRun { corpus: &corpus, vocab: &vocab, freq: &freq, config: &cfg_t };
    let out = train(&run, None, None, None).unwrap();
    let encoder = &out.model.encoder;
    // Also check untrained:
    let untrained = Model::init(&cfg_t);

    for (tag, enc) in [("trained", encoder), ("untrained", &untrained.encoder)] {
        let cfg = DiagnosticsConfig { sample_size: 512, pair_sample: 20000, seed: 2468,
            probe_hidden: 64, probe_epochs: 40, probe_learning_rate: 1e-3, probe_batch: 64,
            holdout_fraction: 0.2 };
        let embeddings = collect_token_embeddings(enc, &corpus, cfg.sample_size, cfg.seed).unwrap();
        let dim = embeddings[0].values.len();

        let mut types: Vec<u32> = embeddings.iter().map(|e| e.token_id).collect();
        types.sort_unstable(); types.dedup();
        types.shuffle(&mut stream(cfg.seed, &[0x51]));
        let holdout_types = ((cfg.holdout_fraction * types.len() as f64).ceil() as usize).clamp(1, types.len()-1);
        let holdout: std::collections::HashSet<u32> = types[..holdout_types].iter().copied().collect();

        let mut train_idx = Vec::new();
        let mut hold_idx = Vec::new();
        for (i, e) in embeddings.iter().enumerate() {
            if holdout.contains(&e.token_id) { hold_idx.push(i); } else { train_idx.push(i); }
        }
        const CAP: usize = 10;
        let mut per_type: std::collections::HashMap<u32, usize> = Default::default();
        let mut class_counts = [0usize; 2];
        train_idx.shuffle(&mut stream(cfg.seed, &[0x54]));
        let mut train_set = Vec::new();
        for &i in &train_idx {
            let e = &embeddings[i];
            let seen = per_type.entry(e.token_id).or_insert(0);
            if *seen >= CAP { continue; }
            *seen += 1;
            class_counts[labels[e.token_id as usize] as usize] += 1;
            train_set.push(i);
        }
        train_set.sort_unstable();
        let total_n = (class_counts[0] + class_counts[1]) as f64;
        let class_weight = [total_n / (2.0 * class_counts[0] as f64), total_n / (2.0 * class_counts[1] as f64)];
        eprintln!("{}: train pool {} (c0 {} c1 {})", tag, train_set.len(), class_counts[0], class_counts[1]);

        let mut probe = DiscriminatorParams::init(dim, cfg.probe_hidden, derive_seed(cfg.seed, &[0x52]));
        let mut adam = Adam::new(AdamConfig { learning_rate: cfg.probe_learning_rate, ..Default::default() });
        for epoch in 0..cfg.probe_epochs {
            let mut order = train_set.clone();
            order.shuffle(&mut stream(cfg.seed, &[0x53, epoch as u64]));
            for batch in order.chunks(cfg.probe_batch) {
                let mut tape = Tape::new();
                let binding = probe.bind(&mut tape, true);
                let mut losses = Vec::new();
                for &i in batch {
                    let e = &embeddings[i];
                    let x = tape.constant(vec![1, dim], e.values.clone()).unwrap();
                    let logits = binding.logits(&mut tape, x).unwrap();
                    let label = labels[e.token_id as usize];
                    let ce = tape.cross_entropy(logits, label as usize).unwrap();
                    losses.push(tape.scale(ce, class_weight[label as usize]).unwrap());
                }
                let stacked = tape.concat(&losses, 0).unwrap();
                let loss = tape.mean(stacked).unwrap();
                let grads = tape.backward(loss).unwrap();
                adam.begin_step();
                for ((name, tensor), (_, id)) in probe.named_tensors_mut("p").iter_mut().zip(binding.named_ids("p").iter()) {
                    if let Some(g) = grads.get(*id) { adam.update(name, cfg.probe_learning_rate, tensor.data_mut(), g); }
                }
            }
        }

        // Training-set accuracy (memorization check) + holdout breakdown.
        let mut tape = Tape::new();
        let binding = probe.bind(&mut tape, false);
        let mut train_correct = 0;
        for &i in &train_set {
            let e = &embeddings[i];
            let x = tape.constant(vec![1, dim], e.values.clone()).unwrap();
            let lg = binding.logits(&mut tape, x).unwrap();
            let d = tape.data(lg);
            if u8::from(d[1] > d[0]) == labels[e.token_id as usize] { train_correct += 1; }
        }
        let mut per_type_hits: std::collections::HashMap<u32, (usize, usize)> = Default::default();
        let mut pred1 = 0usize;
        for &i in &hold_idx {
            let e = &embeddings[i];
            let x = tape.constant(vec![1, dim], e.values.clone()).unwrap();
            let lg = binding.logits(&mut tape, x).unwrap();
            let d = tape.data(lg);
            let pred = u8::from(d[1] > d[0]);
            pred1 += pred as usize;
            let en = per_type_hits.entry(e.token_id).or_insert((0, 0));
            en.1 += 1;
            if pred == labels[e.token_id as usize] { en.0 += 1; }
        }
        let mut acc = [0.0f64; 2];
        let mut n = [0usize; 2];
        for (tid, (h, t)) in &per_type_hits {
            let c = labels[*tid as usize] as usize;
            acc[c] += *h as f64 / *t as f64;
            n[c] += 1;
        }
        eprintln!("{}: train_acc {:.3} | holdout items {} pred1-rate {:.3} | class0 types {} acc {:.3} | class1 types {} acc {:.3}",
            tag, train_correct as f64 / train_set.len() as f64, hold_idx.len(),
            pred1 as f64 / hold_idx.len() as f64,
            n[0], acc[0] / n[0] as f64, n[1], acc[1] / n[1] as f64);
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hc_core::model::{ModelConfig, Variant};
use hc_harness::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "st", "tr", "ch", "sh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ea"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "t", "nd", "ck"];

/// Seeded pseudo-English: a fixed lexicon of syllable words drawn with a
/// Zipf-like bias, a first-order word chain, sentences and paragraphs.
pub fn synthetic_text(bytes: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon: Vec<String> = (0..400)
        .map(|_| {
            let syllables = rng.random_range(1..=3);
            (0..syllables)
                .map(|_| {
                    let o = ONSETS[rng.random_range(0..ONSETS.len())];
                    let v = VOWELS[rng.random_range(0..VOWELS.len())];
                    let c = CODAS[rng.random_range(0..CODAS.len())];
                    format!("{o}{v}{c}")
                })
                .collect()
        })
        .collect();
    // each word prefers a handful of successors
    let successors: Vec<Vec<usize>> =
        (0..lexicon.len()).map(|_| (0..6).map(|_| zipf(&mut rng, lexicon.len())).collect()).collect();
    let mut out = String::with_capacity(bytes + 64);
    let mut word = 0;
    let mut in_sentence = 0;
    while out.len() < bytes {
        word = if rng.random_bool(0.7) {
            successors[word][rng.random_range(0..6)]
        } else {
            zipf(&mut rng, lexicon.len())
        };
        let w = &lexicon[word];
        if in_sentence == 0 {
            let mut c = w.chars();
            let first = c.next().map(|f| f.to_ascii_uppercase()).unwrap_or('A');
            out.push(first);
            out.push_str(c.as_str());
        } else {
            out.push_str(w);
        }
        in_sentence += 1;
        if in_sentence > 4 && rng.random_bool(0.15) {
            out.push_str(if rng.random_bool(0.8) { "." } else { "?" });
            in_sentence = 0;
            out.push_str(if rng.random_bool(0.1) { "\n\n" } else { " " });
        } else if rng.random_bool(0.08) {
            out.push_str(", ");
        } else {
            out.push(' ');
        }
    }
    out.truncate(bytes);
    out
}

fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    // inverse-CDF sample of p(k) ~ 1/(k+1) over 0..n
    let h = ((n + 1) as f64).ln();
    let u: f64 = rng.random();
    (((u * h).exp() - 1.0) as usize).min(n - 1)
}

pub fn write_corpus(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// A quick run on `corpus` with a small model of the given variant.
pub fn small_run(variant: Variant, n: usize, corpus: PathBuf, out_dir: PathBuf) -> RunConfig {
    RunConfig {
        model: ModelConfig { layers: 2, d_model: 32, heads: 4, d_ffn: 64, max_seq_len: 32, ..ModelConfig::tiny(variant, n) },
        steps: 50,
        batch_size: 4,
        seq_len: 32,
        lr: 3e-3,
        warmup_steps: 5,
        min_lr_fraction: 0.1,
        weight_decay: 0.1,
        grad_clip: 1.0,
        beta1: 0.9,
        beta2: 0.95,
        adam_eps: 1e-8,
        eval_interval: 25,
        eval_batches: Some(2),
        checkpoint_interval: 0,
        train_corpus: vec![corpus],
        val_corpus: None,
        val_fraction: 0.1,
        out_dir,
        seed: 1,
        record_wallclock: false,
    }
}

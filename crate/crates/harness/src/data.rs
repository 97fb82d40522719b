//! Byte-level corpus ingestion and batching.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Byte values of `text`.
pub fn tokenize(text: &[u8]) -> Vec<usize> {
    text.iter().map(|&b| b as usize).collect()
}

/// Concatenated bytes of every file, in order.
pub fn ingest(paths: &[PathBuf]) -> Result<Vec<usize>> {
    let mut tokens = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(Error::io(p))?;
        tokens.extend(tokenize(&bytes));
    }
    if tokens.is_empty() {
        return Err(Error::Ingest("corpus is empty".into()));
    }
    Ok(tokens)
}

/// Non-overlapping chunks of `seq_len + 1` tokens taken every `seq_len`
/// tokens, so consecutive windows share one boundary token.
pub fn windows(tokens: &[usize], seq_len: usize) -> Result<Vec<Vec<usize>>> {
    if tokens.len() < seq_len + 1 {
        return Err(Error::Ingest(format!(
            "corpus of {} tokens is shorter than one window of {}",
            tokens.len(),
            seq_len + 1
        )));
    }
    let count = (tokens.len() - 1) / seq_len;
    Ok((0..count).map(|i| tokens[i * seq_len..i * seq_len + seq_len + 1].to_vec()).collect())
}

/// Train and validation windows. Without a separate validation corpus the
/// last `val_fraction` of the training windows (at least one) is held out.
pub fn split(
    train: &[usize],
    val: Option<&[usize]>,
    seq_len: usize,
    val_fraction: f64,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let mut train_w = windows(train, seq_len)?;
    if let Some(val) = val {
        return Ok((train_w, windows(val, seq_len)?));
    }
    let held = ((train_w.len() as f64 * val_fraction).round() as usize).max(1);
    if held >= train_w.len() {
        return Err(Error::Ingest(format!("{} windows are too few to hold out a validation split", train_w.len())));
    }
    let val_w = train_w.split_off(train_w.len() - held);
    Ok((train_w, val_w))
}

/// Draws batches from a window set, reshuffling with a seeded generator at
/// the start of every epoch.
#[derive(Debug, Clone)]
pub struct Batcher {
    windows: Vec<Vec<usize>>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl Batcher {
    pub fn new(windows: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Ingest("no training windows".into()));
        }
        let mut b = Batcher { order: (0..windows.len()).collect(), windows, pos: 0, epoch: 0, seed };
        b.shuffle();
        Ok(b)
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.order = (0..self.windows.len()).collect();
        self.order.shuffle(&mut rng);
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.pos = 0;
                self.shuffle();
            }
            out.push(self.windows[self.order[self.pos]].clone());
            self.pos += 1;
        }
        out
    }
}

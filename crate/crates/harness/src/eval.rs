//! Held-out loss and perplexity.

use std::path::{Path, PathBuf};

use hc_core::model::{load_checkpoint, Checkpoint, Model};
use hc_core::numerics::Real;
use serde::Serialize;

use crate::data::{ingest, windows};
use crate::error::{Error, Result};

/// Mean next-token loss over `windows` (equal-length sequences), batched by
/// `batch_size`, optionally stopping after `max_batches`.
pub fn mean_loss<T: Real>(
    model: &Model<T>,
    windows: &[Vec<usize>],
    batch_size: usize,
    max_batches: Option<usize>,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Ingest("no evaluation windows".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch_size).take(max_batches.unwrap_or(usize::MAX)) {
        let loss = model.loss(chunk)?.to_f64().unwrap_or(f64::NAN);
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub loss: f64,
    pub perplexity: f64,
    pub windows: usize,
    pub tokens: usize,
}

impl EvalReport {
    pub fn from_loss(loss: f64, windows: usize, seq_len: usize) -> Self {
        EvalReport { loss, perplexity: loss.exp(), windows, tokens: windows * seq_len }
    }
}

/// Window length recorded with a training checkpoint, else the model's maximum.
pub fn checkpoint_seq_len<T: Real>(ckpt: &Checkpoint<T>) -> usize {
    ckpt.run_config
        .get("seq_len")
        .and_then(|v| v.as_u64())
        .map(|s| s as usize)
        .unwrap_or(ckpt.model.config().max_seq_len)
}

/// Loss of the checkpointed model on every non-overlapping window of `corpus`.
pub fn evaluate(ckpt_path: &Path, corpus: &[PathBuf], seq_len: Option<usize>, batch_size: usize) -> Result<EvalReport> {
    let ckpt: Checkpoint<f32> = load_checkpoint(ckpt_path)?;
    let seq_len = seq_len.unwrap_or_else(|| checkpoint_seq_len(&ckpt));
    if seq_len < 2 || seq_len > ckpt.model.config().max_seq_len {
        return Err(Error::Config(format!("seq_len {seq_len} outside [2, {}]", ckpt.model.config().max_seq_len)));
    }
    let w = windows(&ingest(corpus)?, seq_len)?;
    let loss = mean_loss(&ckpt.model, &w, batch_size.max(1), None)?;
    Ok(EvalReport::from_loss(loss, w.len(), seq_len))
}

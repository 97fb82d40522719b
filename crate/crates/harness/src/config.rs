//! Run configuration, read from a JSON file.

use std::path::{Path, PathBuf};

use hc_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_min_lr_fraction() -> f64 {
    0.1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub steps: u64,
    pub batch_size: usize,
    /// Tokens per training input; each window holds `seq_len + 1` tokens.
    pub seq_len: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_steps: u64,
    /// Cosine decay ends at `lr * min_lr_fraction`.
    #[serde(default = "default_min_lr_fraction")]
    pub min_lr_fraction: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default)]
    pub grad_clip: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Steps between validation passes; 0 evaluates only at the end.
    #[serde(default)]
    pub eval_interval: u64,
    /// Cap on validation batches per periodic pass; the final pass uses all.
    #[serde(default)]
    pub eval_batches: Option<usize>,
    /// Steps between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    pub train_corpus: Vec<PathBuf>,
    /// Held-out text; when absent the tail `val_fraction` of the training
    /// windows is held out instead.
    #[serde(default)]
    pub val_corpus: Option<Vec<PathBuf>>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Include elapsed seconds in each metrics record.
    #[serde(default = "default_true")]
    pub record_wallclock: bool,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.steps == 0 || self.batch_size == 0 {
            return fail("steps and batch_size must be positive".into());
        }
        if self.warmup_steps >= self.steps {
            return fail(format!("warmup_steps {} must be below steps {}", self.warmup_steps, self.steps));
        }
        if self.seq_len < 2 {
            return fail(format!("seq_len {} must be at least 2", self.seq_len));
        }
        if self.seq_len > self.model.max_seq_len {
            return fail(format!("seq_len {} exceeds model max_seq_len {}", self.seq_len, self.model.max_seq_len));
        }
        if self.model.vocab < 256 {
            return fail(format!("byte tokens need vocab >= 256, got {}", self.model.vocab));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return fail("lr must be positive; weight_decay and grad_clip non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return fail(format!("min_lr_fraction {} outside [0, 1]", self.min_lr_fraction));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return fail("betas must lie in [0, 1) and adam_eps be positive".into());
        }
        if self.val_corpus.is_none() && !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if self.train_corpus.is_empty() {
            return fail("train_corpus lists no files".into());
        }
        Ok(())
    }
}

//! The training loop.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hc_core::model::{save_checkpoint, Checkpoint, Model, RngState};
use hc_core::numerics::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{ingest, split, Batcher};
use crate::error::{Error, Result};
use crate::eval::mean_loss;
use crate::optim::{clip_global_norm, learning_rate, AdamW};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub tokens_seen: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wallclock: Option<f64>,
}

/// Appends one JSON object per line and flushes after each, so the file
/// parses line by line however it is cut off.
pub struct MetricsWriter {
    file: File,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(Error::io(&path))?;
        Ok(MetricsWriter { file, path })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(Error::io(&self.path))?;
        self.file.flush().map_err(Error::io(&self.path))
    }
}

/// Parse a metrics file, skipping non-record lines such as divergence reports.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub records: Vec<MetricsRecord>,
    /// Loss over the whole validation split after the last step.
    pub final_val_loss: f64,
    pub checkpoint: PathBuf,
}

fn checkpoint(
    run: &RunConfig,
    model: &Model<f32>,
    opt: &AdamW<f32>,
    step: u64,
    rng: &ChaCha8Rng,
    path: &Path,
) -> Result<()> {
    opt.audit(model.layout())?;
    let ckpt = Checkpoint {
        model: model.clone(),
        run_config: serde_json::to_value(run)?,
        optimizer: opt.state(model.layout()),
        step,
        rng: Some(RngState::capture(rng)),
    };
    save_checkpoint(&ckpt, path)?;
    Ok(())
}

/// Train a fresh model as described by `run`, writing metrics and
/// checkpoints under `run.out_dir`.
pub fn train(run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    let train_tokens = ingest(&run.train_corpus)?;
    let val_tokens = run.val_corpus.as_deref().map(ingest).transpose()?;
    let (train_w, val_w) = split(&train_tokens, val_tokens.as_deref(), run.seq_len, run.val_fraction)?;
    std::fs::create_dir_all(&run.out_dir).map_err(Error::io(&run.out_dir))?;
    let cfg_path = run.out_dir.join("run_config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(run)?).map_err(Error::io(&cfg_path))?;

    let mut model = Model::<f32>::init(&run.model)?;
    let mut opt = AdamW::new(model.layout(), run.beta1, run.beta2, run.adam_eps, run.weight_decay);
    let mut batcher = Batcher::new(train_w, run.seed)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(run.seed);
    dropout_rng.set_stream(1);
    let mut metrics = MetricsWriter::create(run.out_dir.join(METRICS_FILE))?;
    let start = Instant::now();
    let mut records = Vec::with_capacity(run.steps as usize);
    let mut tokens_seen = 0u64;
    let mut final_val_loss = f64::NAN;

    for step in 0..run.steps {
        let lr = learning_rate(step, run.steps, run.warmup_steps, run.lr, run.min_lr_fraction);
        let batch = batcher.next_batch(run.batch_size);
        let rng = (run.model.dropout > 0.0).then_some(&mut dropout_rng);
        let (loss, mut grads): (f32, Vec<Tensor<f32>>) = model.loss_and_grads(&batch, rng)?;
        let grad_norm = clip_global_norm(&mut grads, run.grad_clip);
        let done = step + 1;
        if !loss.is_finite() || !grad_norm.is_finite() {
            let reason = format!("train loss {loss}, gradient norm {grad_norm}");
            metrics.write(&serde_json::json!({
                "event": "diverged",
                "step": done,
                "train_loss": loss.to_string(),
                "grad_norm": grad_norm.to_string(),
                "lr": lr,
                "tokens_seen": tokens_seen,
            }))?;
            return Err(Error::Diverged { step: done, reason });
        }
        opt.step(model.params_mut(), &grads, lr)?;
        tokens_seen += (run.batch_size * run.seq_len) as u64;

        let last = done == run.steps;
        let val_loss = if last {
            final_val_loss = mean_loss(&model, &val_w, run.batch_size, None)?;
            Some(final_val_loss)
        } else if run.eval_interval > 0 && done % run.eval_interval == 0 {
            Some(mean_loss(&model, &val_w, run.batch_size, run.eval_batches)?)
        } else {
            None
        };
        let record = MetricsRecord {
            step: done,
            train_loss: loss as f64,
            val_loss,
            lr,
            grad_norm,
            tokens_seen,
            wallclock: run.record_wallclock.then(|| start.elapsed().as_secs_f64()),
        };
        metrics.write(&record)?;
        records.push(record);
        if !last && run.checkpoint_interval > 0 && done % run.checkpoint_interval == 0 {
            let path = run.out_dir.join(format!("step_{done:06}.ckpt"));
            checkpoint(run, &model, &opt, done, &dropout_rng, &path)?;
        }
    }
    let path = run.out_dir.join(FINAL_CHECKPOINT);
    checkpoint(run, &model, &opt, run.steps, &dropout_rng, &path)?;
    Ok(TrainOutcome { model, records, final_val_loss, checkpoint: path })
}

//! File exports of the analysis tools.

use std::path::{Path, PathBuf};

use hc_core::analysis::{cosine_profile, cost_report, matrix_csv, site_weights, unfold, CostReport};
use hc_core::model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ingest, windows};
use crate::error::{Error, Result};

/// Token batch that feeds forward-pass analyses: the first `count` windows
/// of `corpus`, or seeded random bytes when no corpus is given.
pub fn analysis_batch(cfg: &ModelConfig, corpus: Option<&[PathBuf]>, count: usize, seq_len: usize) -> Result<Vec<Vec<usize>>> {
    let seq_len = seq_len.min(cfg.max_seq_len);
    match corpus {
        Some(paths) => {
            let w = windows(&ingest(paths)?, seq_len)?;
            Ok(w.into_iter().take(count).map(|mut s| {
                s.truncate(seq_len);
                s
            }).collect())
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok((0..count).map(|_| (0..seq_len).map(|_| rng.random_range(0..cfg.vocab)).collect()).collect())
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(Error::io(&path))?;
    Ok(path)
}

/// Connection matrices as `unfold_c0.csv`, `unfold_c{i}.csv` and `unfold.json`.
pub fn export_unfold<T: hc_core::numerics::Real>(model: &Model<T>, batch: &[Vec<usize>], out: &Path) -> Result<Vec<PathBuf>> {
    let u = unfold(&site_weights(model, batch)?)?;
    let mut files = vec![write(out, "unfold_c0.csv", &matrix_csv(&u.c0))?];
    for (i, m) in u.ci.iter().enumerate() {
        files.push(write(out, &format!("unfold_c{}.csv", i + 1), &matrix_csv(m))?);
    }
    files.push(write(out, "unfold.json", &serde_json::to_string_pretty(&u.to_json())?)?);
    Ok(files)
}

/// Similarity profile as `cosine.csv` and `cosine.json`.
pub fn export_cosine<T: hc_core::numerics::Real>(model: &Model<T>, batch: &[Vec<usize>], out: &Path) -> Result<Vec<PathBuf>> {
    let p = cosine_profile(model, batch)?;
    Ok(vec![write(out, "cosine.csv", &p.to_csv())?, write(out, "cosine.json", &serde_json::to_string_pretty(&p)?)?])
}

/// Cost estimates as `cost.json`.
pub fn export_cost(cfg: &ModelConfig, batch: usize, seq: usize, out: &Path) -> Result<(CostReport, PathBuf)> {
    let report = cost_report(cfg, batch, seq)?;
    let path = write(out, "cost.json", &serde_json::to_string_pretty(&report)?)?;
    Ok((report, path))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

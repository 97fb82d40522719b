//! Cosine similarity between the inputs of adjacent layers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    /// Compares layer input `layer` with layer input `layer + 1`; input 0 is the embedding.
    pub layer: usize,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
    /// Tokens that contributed.
    pub count: usize,
    /// Tokens skipped because one of the two vectors was zero.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityProfile {
    pub rows: Vec<SimilarityRow>,
}

/// `a . b / (|a| |b|)` clamped to `[-1, 1]`; `None` if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Percentile `q` in `[0, 1]` of sorted data, linearly interpolated between ranks.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Profile over a sequence of `[N, d]` layer inputs.
pub fn profile_from_inputs(inputs: &[Tensor<f64>]) -> Result<SimilarityProfile> {
    let mut rows = Vec::new();
    for (layer, pair) in inputs.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if a.shape() != b.shape() || a.rank() != 2 {
            return Err(Error::dim("layer inputs must share an [N, d] shape"));
        }
        let mut sims = Vec::with_capacity(a.shape()[0]);
        let mut excluded = 0;
        for t in 0..a.shape()[0] {
            match cosine(a.row(t), b.row(t)) {
                Some(c) => sims.push(c),
                None => excluded += 1,
            }
        }
        sims.sort_by(f64::total_cmp);
        rows.push(SimilarityRow {
            layer,
            median: percentile(&sims, 0.5),
            p05: percentile(&sims, 0.05),
            p95: percentile(&sims, 0.95),
            count: sims.len(),
            excluded,
        });
    }
    Ok(SimilarityProfile { rows })
}

/// Similarity of consecutive layer inputs of `model` over the tokens of `batch`.
pub fn cosine_profile<T: Real>(model: &Model<T>, batch: &[Vec<usize>]) -> Result<SimilarityProfile> {
    let trace = model.trace(batch)?;
    let mut inputs = vec![trace.embedding.cast::<f64>()];
    inputs.extend(trace.site_inputs.iter().map(Tensor::cast::<f64>));
    profile_from_inputs(&inputs)
}

impl SimilarityProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,p05,median,p95,count,excluded\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.layer, r.p05, r.median, r.p95, r.count, r.excluded));
        }
        out
    }
}

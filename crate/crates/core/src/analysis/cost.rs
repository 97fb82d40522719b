//! Closed-form parameter, FLOP and activation-memory accounting.
//!
//! FLOPs are per token, one multiply-accumulate counted as two FLOPs. The
//! baseline counts every weight matmul (`2 * weights`) plus one residual add
//! of `d` per connection site; attention score FLOPs, norms and softmax are
//! left out of both sides. A hyper-connection site replaces the residual add
//! with its width mix `d n (n+1)`, depth connection `n d` and, for the
//! dynamic variant, the projection `n d (n+2)` of every row of `H`.

use serde::Serialize;

use crate::error::Result;
use crate::hyperconn::DhcNormKind;
use crate::model::{ModelConfig, ParamGroup, ParamLayout, Variant};

/// A 1B-parameter decoder configuration: 16 layers, width 2048, 16 heads,
/// FFN width 12288, vocabulary 50304, tied embeddings, no learned positions.
pub fn olmo_1b(variant: Variant, n: usize) -> ModelConfig {
    ModelConfig {
        layers: 16,
        d_model: 2048,
        heads: 16,
        d_ffn: 12288,
        vocab: 50304,
        max_seq_len: 2048,
        n,
        variant,
        tanh: true,
        tie_embeddings: true,
        learned_pos_emb: false,
        dhc_norm: DhcNormKind::Rms,
        dropout: 0.0,
        seed: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// Hyper-connection parameters from the closed form.
    pub hc_formula: u64,
    /// Hyper-connection parameters summed over the model's tensors.
    pub hc_measured: u64,
    pub total_formula: u64,
    pub total_measured: u64,
}

impl ParamCount {
    /// Extra parameters relative to the same model without hyper-connections.
    pub fn delta_rate(&self) -> f64 {
        self.hc_formula as f64 / (self.total_formula - self.hc_formula) as f64
    }
}

/// Hyper-connection parameters at one site.
pub fn site_params(cfg: &ModelConfig) -> u64 {
    let (n, d) = (cfg.n as u64, cfg.d_model as u64);
    match cfg.variant {
        Variant::Prenorm | Variant::Postnorm => 0,
        Variant::Shc => n * (n + 2),
        Variant::Dhc => {
            let norm = if cfg.dhc_norm == DhcNormKind::LayerNorm { d } else { 0 };
            norm + d * (n + 2) + n * (n + 2) + 2
        }
    }
}

pub fn count_params(cfg: &ModelConfig) -> Result<ParamCount> {
    let layout = ParamLayout::new(cfg)?;
    let (l, d, v, f) = (cfg.layers as u64, cfg.d_model as u64, cfg.vocab as u64, cfg.d_ffn as u64);
    let hc_formula = site_params(cfg) * 2 * l;
    let mut total_formula = v * d + l * (4 * d * d + 2 * d * f) + hc_formula;
    if cfg.learned_pos_emb {
        total_formula += cfg.max_seq_len as u64 * d;
    }
    if !cfg.tie_embeddings {
        total_formula += v * d;
    }
    let hc_measured = layout
        .specs()
        .iter()
        .filter(|s| s.group != ParamGroup::Regular)
        .map(|s| s.numel() as u64)
        .sum();
    Ok(ParamCount { hc_formula, hc_measured, total_formula, total_measured: layout.total_numel() as u64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopCount {
    /// Baseline transformer FLOPs per token, residual adds included.
    pub baseline: u64,
    /// FLOPs per token spent in hyper-connections.
    pub hc: u64,
    /// FLOPs per token of the configured model.
    pub total: u64,
}

impl FlopCount {
    pub fn delta_rate(&self) -> f64 {
        (self.total as f64 - self.baseline as f64) / self.baseline as f64
    }
}

pub fn estimate_flops(cfg: &ModelConfig) -> Result<FlopCount> {
    cfg.validate()?;
    let (l, d, v, f) = (cfg.layers as u64, cfg.d_model as u64, cfg.vocab as u64, cfg.d_ffn as u64);
    let n = cfg.n as u64;
    let sites = 2 * l;
    let residual = 2 * d * sites;
    let baseline = 2 * (l * (4 * d * d + 2 * d * f) + v * d) + residual;
    let per_site = match cfg.variant {
        Variant::Prenorm | Variant::Postnorm => 0,
        Variant::Shc => d * n * (n + 1) + n * d,
        Variant::Dhc => d * n * (n + 1) + n * d + n * d * (n + 2),
    };
    let hc = 2 * per_site * sites;
    let total = if cfg.variant.is_hc() { baseline - residual + hc } else { baseline };
    Ok(FlopCount { baseline, hc, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryEstimate {
    /// `s b d L (34 + 5 a s / d)` value slots.
    pub baseline: f64,
    /// `2 n s b d L` extra value slots for the hyper hidden matrices.
    pub hc: f64,
}

pub fn estimate_activation_memory(cfg: &ModelConfig, batch: usize, seq: usize) -> Result<MemoryEstimate> {
    cfg.validate()?;
    let (s, b, d, l, a) = (seq as f64, batch as f64, cfg.d_model as f64, cfg.layers as f64, cfg.heads as f64);
    let baseline = s * b * d * l * (34.0 + 5.0 * a * s / d);
    let n = if cfg.variant.is_hc() { cfg.n as f64 } else { 0.0 };
    Ok(MemoryEstimate { baseline, hc: 2.0 * n * s * b * d * l })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub hc_params: u64,
    pub total_params: u64,
    pub delta_rate: f64,
    pub hc_flops_per_token: u64,
    pub total_flops_per_token: u64,
    pub flops_delta_rate: f64,
    pub activation_memory_estimate: f64,
    pub activation_memory_hc: f64,
}

/// All estimates for `cfg` at batch `batch` and sequence length `seq`.
pub fn cost_report(cfg: &ModelConfig, batch: usize, seq: usize) -> Result<CostReport> {
    let p = count_params(cfg)?;
    let f = estimate_flops(cfg)?;
    let m = estimate_activation_memory(cfg, batch, seq)?;
    Ok(CostReport {
        hc_params: p.hc_formula,
        total_params: p.total_formula,
        delta_rate: p.delta_rate(),
        hc_flops_per_token: f.hc,
        total_flops_per_token: f.total,
        flops_delta_rate: f.delta_rate(),
        activation_memory_estimate: m.baseline + m.hc,
        activation_memory_hc: m.hc,
    })
}

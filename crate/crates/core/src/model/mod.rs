//! Decoder-only transformer with a selectable residual scheme.
//!
//! Parameters live in one flat, name-ordered list described by a
//! [`ParamLayout`], which is a pure function of the [`ModelConfig`]. The
//! forward pass in [`forward`] only needs the layout and tape variables, so
//! the same code runs at any precision and under gradient checking.

pub mod checkpoint;
pub mod forward;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperconn::{DhcNorm, DhcNormKind, DynamicHcParams, HcParams, HcSiteConfig, StaticHcParams, GATE_INIT};
use crate::numerics::{Real, Tape, Tensor, Var, NORM_EPS};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use forward::{forward, next_token_loss, ForwardOptions, ForwardVars};

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Prenorm,
    Postnorm,
    Shc,
    Dhc,
}

impl Variant {
    pub fn is_hc(self) -> bool {
        matches!(self, Variant::Shc | Variant::Dhc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Prenorm => "prenorm",
            Variant::Postnorm => "postnorm",
            Variant::Shc => "shc",
            Variant::Dhc => "dhc",
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_n() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub vocab: usize,
    pub max_seq_len: usize,
    /// Expansion rate; only used by the hyper-connection variants.
    #[serde(default = "default_n")]
    pub n: usize,
    pub variant: Variant,
    #[serde(default = "default_true")]
    pub tanh: bool,
    #[serde(default = "default_true")]
    pub tie_embeddings: bool,
    /// Learned absolute position embeddings added to the token embeddings.
    #[serde(default = "default_true")]
    pub learned_pos_emb: bool,
    #[serde(default)]
    pub dhc_norm: DhcNormKind,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// A small configuration, mostly for tests and examples.
    pub fn tiny(variant: Variant, n: usize) -> Self {
        Self {
            layers: 2,
            d_model: 32,
            heads: 4,
            d_ffn: 64,
            vocab: 256,
            max_seq_len: 64,
            n,
            variant,
            tanh: true,
            tie_embeddings: true,
            learned_pos_emb: true,
            dhc_norm: DhcNormKind::Rms,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.d_model == 0 || self.d_ffn == 0 || self.vocab == 0 {
            return fail("layers, d_model, d_ffn and vocab must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive".into());
        }
        if self.variant.is_hc() && self.n == 0 {
            return fail("expansion rate n must be >= 1 for hyper-connections".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.variant == Variant::Dhc && self.dhc_norm == DhcNormKind::LayerNorm && self.d_model < 2 {
            return fail("layer-norm dynamic projection needs d_model >= 2".into());
        }
        Ok(())
    }

    /// Effective expansion rate: `n` for hyper-connections, 1 otherwise.
    pub fn rate(&self) -> usize {
        if self.variant.is_hc() {
            self.n
        } else {
            1
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Two connection sites per block: attention, then FFN.
    pub fn sites(&self) -> usize {
        2 * self.layers
    }

    pub fn site_config(&self) -> HcSiteConfig {
        HcSiteConfig {
            n: self.rate(),
            dynamic: self.variant == Variant::Dhc,
            tanh: self.tanh,
            norm: self.dhc_norm,
            eps: NORM_EPS,
        }
    }
}

/// Optimizer treatment of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Regular,
    StaticHc,
    DynamicHc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    TruncNormal(f64),
    Zeros,
    Ones,
    Fill(f64),
    /// `[e_{k mod n} | I]`, shape `[n, n+1]`.
    HcAlpha { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Name of HC site `k`'s parameter prefix, e.g. `blocks.1.ffn_hc`.
pub fn site_prefix(k: usize) -> String {
    format!("blocks.{}.{}_hc", k / 2, if k % 2 == 0 { "attn" } else { "ffn" })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: BTreeMap<String, usize>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, v, f) = (cfg.d_model, cfg.vocab, cfg.d_ffn);
        let n = cfg.rate();
        let out_std = if cfg.variant.is_hc() { INIT_STD / (n as f64).sqrt() } else { INIT_STD };
        let mut specs = Vec::new();
        let mut push = |name: String, shape: &[usize], group, init| {
            specs.push(ParamSpec { name, shape: shape.to_vec(), group, init });
        };
        let normal = InitKind::TruncNormal(INIT_STD);
        push("tok_emb".into(), &[v, d], ParamGroup::Regular, normal.clone());
        if cfg.learned_pos_emb {
            push("pos_emb".into(), &[cfg.max_seq_len, d], ParamGroup::Regular, normal.clone());
        }
        for b in 0..cfg.layers {
            for w in ["wq", "wk", "wv"] {
                push(format!("blocks.{b}.attn.{w}"), &[d, d], ParamGroup::Regular, normal.clone());
            }
            push(format!("blocks.{b}.attn.wo"), &[d, d], ParamGroup::Regular, InitKind::TruncNormal(out_std));
            push(format!("blocks.{b}.ffn.w1"), &[d, f], ParamGroup::Regular, normal.clone());
            push(format!("blocks.{b}.ffn.w2"), &[f, d], ParamGroup::Regular, InitKind::TruncNormal(out_std));
            if !cfg.variant.is_hc() {
                continue;
            }
            for k in [2 * b, 2 * b + 1] {
                let p = site_prefix(k);
                push(format!("{p}.static_beta"), &[n], ParamGroup::StaticHc, InitKind::Ones);
                push(format!("{p}.static_alpha"), &[n, n + 1], ParamGroup::StaticHc, InitKind::HcAlpha { k });
                if cfg.variant == Variant::Dhc {
                    let g = ParamGroup::DynamicHc;
                    push(format!("{p}.dynamic_alpha_fn"), &[d, n + 1], g, InitKind::Zeros);
                    push(format!("{p}.dynamic_alpha_scale"), &[1], g, InitKind::Fill(GATE_INIT));
                    push(format!("{p}.dynamic_beta_fn"), &[d], g, InitKind::Zeros);
                    push(format!("{p}.dynamic_beta_scale"), &[1], g, InitKind::Fill(GATE_INIT));
                    if cfg.dhc_norm == DhcNormKind::LayerNorm {
                        push(format!("{p}.norm_weight"), &[d], g, InitKind::Ones);
                    }
                }
            }
        }
        if !cfg.tie_embeddings {
            push("lm_head".into(), &[v, d], ParamGroup::Regular, normal);
        }
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(Self { specs, index })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.get(name).ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    pub fn total_numel(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

fn init_tensor<T: Real>(spec: &ParamSpec, n: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    match spec.init {
        InitKind::TruncNormal(std) => Tensor::trunc_normal(&spec.shape, std, rng),
        InitKind::Zeros => Tensor::zeros(&spec.shape),
        InitKind::Ones => Tensor::ones(&spec.shape),
        InitKind::Fill(v) => Tensor::full(&spec.shape, T::c(v)),
        InitKind::HcAlpha { k } => StaticHcParams::<T>::init(k, n).expect("n >= 1").alpha(),
    }
}

/// Weights of a model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<Tensor<T>>,
}

/// Tensors recorded during a forward pass, for analysis.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// `[N, vocab]` for `N = batch * seq` tokens.
    pub logits: Tensor<T>,
    /// `[N, d]`
    pub embedding: Tensor<T>,
    /// Input to each connection site's layer (before its norm), `[N, d]` each.
    pub site_inputs: Vec<Tensor<T>>,
    /// Effective `(alpha [N, n, n+1], beta [N, n, 1])` per dynamic site.
    pub site_coeffs: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> Model<T> {
    /// Fresh weights from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let layout = ParamLayout::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.rate();
        let params = layout.specs().iter().map(|s| init_tensor(s, n, &mut rng)).collect();
        Ok(Self { config: config.clone(), layout, params })
    }

    pub fn from_params(config: &ModelConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        let layout = ParamLayout::new(config)?;
        if params.len() != layout.len() {
            return Err(Error::dim(format!("expected {} tensors, got {}", layout.len(), params.len())));
        }
        for (s, p) in layout.specs().iter().zip(&params) {
            if p.shape() != s.shape.as_slice() {
                return Err(Error::dim(format!("{}: expected {:?}, got {:?}", s.name, s.shape, p.shape())));
            }
        }
        Ok(Self { config: config.clone(), layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout.get(name).map(|i| &self.params[i])
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self.layout.index(name)?;
        if value.shape() != self.params[i].shape() {
            return Err(Error::dim(format!("{name}: shape {:?} != {:?}", value.shape(), self.params[i].shape())));
        }
        self.params[i] = value;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), layout: self.layout.clone(), params: self.params.iter().map(Tensor::cast).collect() }
    }

    /// Copy every tensor whose name and shape also exist in `other`; returns how many were copied.
    pub fn transplant_from(&mut self, other: &Model<T>) -> usize {
        let mut copied = 0;
        for (spec, p) in self.layout.specs.iter().zip(self.params.iter_mut()) {
            if let Some(src) = other.param(&spec.name) {
                if src.shape() == p.shape() {
                    *p = src.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    fn record(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone(), trainable)).collect()
    }

    /// Logits `[seq, vocab]` for one sequence.
    pub fn logits(&self, ids: &[usize]) -> Result<Tensor<T>> {
        self.logits_batch(&[ids.to_vec()])
    }

    /// Logits `[batch * seq, vocab]`.
    pub fn logits_batch(&self, batch: &[Vec<usize>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let out = forward(&self.config, &self.layout, &mut tape, &vars, batch, ForwardOptions::default())?;
        Ok(tape.value(out.logits).clone())
    }

    /// Forward pass keeping the per-site intermediates.
    pub fn trace(&self, batch: &[Vec<usize>]) -> Result<ForwardTrace<T>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let out = forward(&self.config, &self.layout, &mut tape, &vars, batch, ForwardOptions::default())?;
        let v = |x: Var| tape.value(x).clone();
        Ok(ForwardTrace {
            logits: v(out.logits),
            embedding: v(out.embedding),
            site_inputs: out.site_inputs.iter().map(|&x| v(x)).collect(),
            site_coeffs: out.site_coeffs.iter().map(|c| c.map(|(a, b)| (v(a), v(b)))).collect(),
        })
    }

    /// Mean next-token loss over every sequence in `batch`.
    pub fn loss(&self, batch: &[Vec<usize>]) -> Result<T> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let loss = next_token_loss(&self.config, &self.layout, &mut tape, &vars, batch, ForwardOptions::default())?;
        Ok(tape.value(loss).item())
    }

    /// Loss and one gradient per parameter tensor, aligned with [`Model::params`].
    pub fn loss_and_grads(&self, batch: &[Vec<usize>], dropout_rng: Option<&mut ChaCha8Rng>) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, true);
        let opts = ForwardOptions { dropout_rng };
        let loss = next_token_loss(&self.config, &self.layout, &mut tape, &vars, batch, opts)?;
        let mut grads = tape.backward(loss)?;
        let out = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((tape.value(loss).item(), out))
    }

    /// Plain connection parameters of HC site `k`.
    pub fn hc_params(&self, k: usize) -> Result<HcParams<T>> {
        if !self.config.variant.is_hc() {
            return Err(Error::config(format!("variant {} has no hyper-connections", self.config.variant.name())));
        }
        if k >= self.config.sites() {
            return Err(Error::Index(format!("site {k} >= {}", self.config.sites())));
        }
        let p = site_prefix(k);
        let get = |s: &str| self.param(&format!("{p}.{s}")).ok_or_else(|| Error::config(format!("missing {p}.{s}")));
        let stat = StaticHcParams::from_tensors(get("static_beta")?, get("static_alpha")?)?;
        if self.config.variant == Variant::Shc {
            return Ok(HcParams::Static(stat));
        }
        let norm = match self.config.dhc_norm {
            DhcNormKind::Rms => DhcNorm::Rms,
            DhcNormKind::LayerNorm => DhcNorm::LayerNorm { gain: get("norm_weight")?.data().to_vec() },
        };
        Ok(HcParams::Dynamic(DynamicHcParams {
            stat,
            w_beta: get("dynamic_beta_fn")?.data().to_vec(),
            w_alpha: get("dynamic_alpha_fn")?.clone(),
            s_beta: get("dynamic_beta_scale")?.data()[0],
            s_alpha: get("dynamic_alpha_scale")?.data()[0],
            norm,
            eps: NORM_EPS,
        }))
    }
}

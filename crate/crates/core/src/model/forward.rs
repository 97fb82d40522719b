//! The transformer forward pass recorded on a tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{site_prefix, ModelConfig, ParamLayout, Variant};
use crate::error::{Error, Result};
use crate::hyperconn::{depth_on_tape, width_on_tape, DynamicVars, SiteVars};
use crate::numerics::{Real, Tape, Tensor, Var, NORM_EPS};

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Source of dropout masks; dropout is skipped when `None`.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[N, vocab]`
    pub logits: Var,
    /// Token plus position embedding, `[N, d]`.
    pub embedding: Var,
    /// Stream after the last block, before the final norm, `[N, d]`.
    pub final_hidden: Var,
    /// Input to each site's layer, `[N, d]`.
    pub site_inputs: Vec<Var>,
    /// `(alpha, beta)` at each dynamic site.
    pub site_coeffs: Vec<Option<(Var, Var)>>,
}

struct Ctx<'a, 'b, T: Real> {
    cfg: &'a ModelConfig,
    layout: &'a ParamLayout,
    vars: &'a [Var],
    tape: &'a mut Tape<T>,
    opts: ForwardOptions<'b>,
    batch: usize,
    seq: usize,
}

impl<T: Real> Ctx<'_, '_, T> {
    fn p(&self, name: &str) -> Result<Var> {
        Ok(self.vars[self.layout.index(name)?])
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.cfg.dropout;
        let Some(rng) = self.opts.dropout_rng.as_deref_mut() else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let shape = self.tape.shape(x).to_vec();
        let keep = T::c(1.0 / (1.0 - p));
        let numel = shape.iter().product();
        let mask = (0..numel).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let mask = self.tape.constant(Tensor::new(&shape, mask)?);
        self.tape.mul(x, mask)
    }

    /// `[N, d] -> [B, heads, T, hd]`
    fn split_heads(&mut self, x: Var) -> Result<Var> {
        let (h, hd) = (self.cfg.heads, self.cfg.head_dim());
        let x = self.tape.reshape(x, &[self.batch, self.seq, h, hd])?;
        self.tape.permute(x, &[0, 2, 1, 3])
    }

    fn attention(&mut self, block: usize, x: Var) -> Result<Var> {
        let pre = format!("blocks.{block}.attn");
        let (wq, wk, wv, wo) =
            (self.p(&format!("{pre}.wq"))?, self.p(&format!("{pre}.wk"))?, self.p(&format!("{pre}.wv"))?, self.p(&format!("{pre}.wo"))?);
        let q = self.tape.matmul(x, wq)?;
        let k = self.tape.matmul(x, wk)?;
        let v = self.tape.matmul(x, wv)?;
        let (q, k, v) = (self.split_heads(q)?, self.split_heads(k)?, self.split_heads(v)?);
        let scores = self.tape.matmul_t(q, k, false, true)?;
        let scores = self.tape.scale(scores, T::c(1.0 / (self.cfg.head_dim() as f64).sqrt()));
        let att = self.tape.softmax(scores, true)?;
        let ctx = self.tape.matmul(att, v)?;
        let ctx = self.tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.tape.reshape(ctx, &[self.batch * self.seq, self.cfg.d_model])?;
        let out = self.tape.matmul(ctx, wo)?;
        self.dropout(out)
    }

    fn ffn(&mut self, block: usize, x: Var) -> Result<Var> {
        let w1 = self.p(&format!("blocks.{block}.ffn.w1"))?;
        let w2 = self.p(&format!("blocks.{block}.ffn.w2"))?;
        let h = self.tape.matmul(x, w1)?;
        let h = self.tape.gelu(h);
        let out = self.tape.matmul(h, w2)?;
        self.dropout(out)
    }

    /// Layer at site `k`. Pre-norm style layers normalize their own input.
    fn layer(&mut self, k: usize, x: Var, normalize: bool) -> Result<Var> {
        let x = if normalize { self.tape.rms_norm(x, NORM_EPS)? } else { x };
        if k % 2 == 0 {
            self.attention(k / 2, x)
        } else {
            self.ffn(k / 2, x)
        }
    }

    fn site_vars(&self, k: usize) -> Result<SiteVars> {
        let p = site_prefix(k);
        let dynamic = if self.cfg.variant == Variant::Dhc {
            Some(DynamicVars {
                w_alpha: self.p(&format!("{p}.dynamic_alpha_fn"))?,
                w_beta: self.p(&format!("{p}.dynamic_beta_fn"))?,
                s_alpha: self.p(&format!("{p}.dynamic_alpha_scale"))?,
                s_beta: self.p(&format!("{p}.dynamic_beta_scale"))?,
                norm_gain: self.layout.get(&format!("{p}.norm_weight")).map(|i| self.vars[i]),
            })
        } else {
            None
        };
        Ok(SiteVars {
            static_beta: self.p(&format!("{p}.static_beta"))?,
            static_alpha: self.p(&format!("{p}.static_alpha"))?,
            dynamic,
        })
    }
}

fn check_batch(cfg: &ModelConfig, batch: &[Vec<usize>]) -> Result<(usize, usize)> {
    let Some(first) = batch.first() else { return Err(Error::dim("empty batch")) };
    let seq = first.len();
    if seq == 0 || batch.iter().any(|s| s.len() != seq) {
        return Err(Error::dim("sequences must be nonempty and of equal length"));
    }
    if seq > cfg.max_seq_len {
        return Err(Error::dim(format!("sequence length {seq} exceeds max_seq_len {}", cfg.max_seq_len)));
    }
    if let Some(&id) = batch.iter().flatten().find(|&&id| id >= cfg.vocab) {
        return Err(Error::Index(format!("token id {id} >= vocab {}", cfg.vocab)));
    }
    Ok((batch.len(), seq))
}

/// Logits for every position of every sequence in `batch`. `vars` are the
/// model parameters on `tape`, in [`ParamLayout`] order.
pub fn forward<T: Real>(
    cfg: &ModelConfig,
    layout: &ParamLayout,
    tape: &mut Tape<T>,
    vars: &[Var],
    batch: &[Vec<usize>],
    opts: ForwardOptions<'_>,
) -> Result<ForwardVars> {
    if vars.len() != layout.len() {
        return Err(Error::dim(format!("{} parameter vars for a layout of {}", vars.len(), layout.len())));
    }
    let (b, s) = check_batch(cfg, batch)?;
    let mut cx = Ctx { cfg, layout, vars, tape, opts, batch: b, seq: s };
    let ids: Vec<usize> = batch.iter().flatten().copied().collect();
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let tok = cx.tape.embedding(cx.p("tok_emb")?, &ids)?;
    let embedding = match layout.get("pos_emb") {
        Some(i) => {
            let pos = cx.tape.embedding(vars[i], &positions)?;
            cx.tape.add(tok, pos)?
        }
        None => tok,
    };
    let tokens = b * s;
    let d = cfg.d_model;

    let mut site_inputs = Vec::with_capacity(cfg.sites());
    let mut site_coeffs = Vec::with_capacity(cfg.sites());
    let final_hidden = match cfg.variant {
        Variant::Prenorm | Variant::Postnorm => {
            let post = cfg.variant == Variant::Postnorm;
            let mut h = embedding;
            for k in 0..cfg.sites() {
                site_inputs.push(h);
                site_coeffs.push(None);
                let y = cx.layer(k, h, !post)?;
                h = cx.tape.add(h, y)?;
                if post {
                    h = cx.tape.layer_norm(h, NORM_EPS)?;
                }
            }
            h
        }
        Variant::Shc | Variant::Dhc => {
            let n = cfg.n;
            let site_cfg = cfg.site_config();
            let e = cx.tape.reshape(embedding, &[tokens, 1, d])?;
            let mut h = cx.tape.broadcast_to(e, &[tokens, n, d])?;
            for k in 0..cfg.sites() {
                let sv = cx.site_vars(k)?;
                let width = width_on_tape(cx.tape, &site_cfg, &sv, h)?;
                site_inputs.push(width.layer_input);
                site_coeffs.push(site_cfg.dynamic.then_some((width.alpha, width.beta)));
                let y = cx.layer(k, width.layer_input, true)?;
                h = depth_on_tape(cx.tape, &width, y)?;
            }
            cx.tape.sum_axis(h, 1)?
        }
    };
    // eps = 0 keeps this norm exactly invariant to positive rescaling of the stream.
    let normed = cx.tape.rms_norm(final_hidden, 0.0)?;
    let logits = match layout.get("lm_head") {
        Some(i) => cx.tape.matmul_t(normed, vars[i], false, true)?,
        None => cx.tape.matmul_t(normed, cx.p("tok_emb")?, false, true)?,
    };
    Ok(ForwardVars { logits, embedding, final_hidden, site_inputs, site_coeffs })
}

/// Mean cross entropy of predicting token `t+1` from tokens `..=t`.
pub fn next_token_loss<T: Real>(
    cfg: &ModelConfig,
    layout: &ParamLayout,
    tape: &mut Tape<T>,
    vars: &[Var],
    batch: &[Vec<usize>],
    opts: ForwardOptions<'_>,
) -> Result<Var> {
    if batch.iter().any(|s| s.len() < 2) {
        return Err(Error::dim("next-token loss needs sequences of length >= 2"));
    }
    let inputs: Vec<Vec<usize>> = batch.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
    let targets: Vec<usize> = batch.iter().flat_map(|s| s[1..].iter().copied()).collect();
    let out = forward(cfg, layout, tape, vars, &inputs, opts)?;
    tape.cross_entropy(out.logits, &targets)
}

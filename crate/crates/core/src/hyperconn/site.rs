//! Hyper-connection sites recorded on a tape, batched over tokens.
//!
//! The hyper hidden state is a `[N, n, d]` variable (`N` tokens). Static
//! coefficients are shared by every token, dynamic ones are computed per row.

use serde::{Deserialize, Serialize};

use super::{DhcNorm, HcParams};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Normalization used by the dynamic projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DhcNormKind {
    #[default]
    Rms,
    LayerNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcSiteConfig {
    pub n: usize,
    pub dynamic: bool,
    pub tanh: bool,
    pub norm: DhcNormKind,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DynamicVars {
    /// `[d, n+1]`
    pub w_alpha: Var,
    /// `[d]`
    pub w_beta: Var,
    /// `[1]`
    pub s_alpha: Var,
    /// `[1]`
    pub s_beta: Var,
    /// `[d]`, only with [`DhcNormKind::LayerNorm`].
    pub norm_gain: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct SiteVars {
    /// `[n]`
    pub static_beta: Var,
    /// `[n, n+1]`
    pub static_alpha: Var,
    pub dynamic: Option<DynamicVars>,
}

impl SiteVars {
    /// Put the tensors of `params` on the tape, as trainable leaves when `trainable`.
    pub fn from_params<T: Real>(tape: &mut Tape<T>, params: &HcParams<T>, trainable: bool) -> Self {
        let mut leaf = |t: Tensor<T>| tape.leaf(t, trainable);
        let stat = params.static_part();
        let static_beta = leaf(stat.beta_tensor());
        let static_alpha = leaf(stat.alpha());
        let dynamic = match params {
            HcParams::Static(_) => None,
            HcParams::Dynamic(dp) => {
                let d = dp.d();
                Some(DynamicVars {
                    w_alpha: leaf(dp.w_alpha.clone()),
                    w_beta: leaf(Tensor::new(&[d], dp.w_beta.clone()).expect("length d")),
                    s_alpha: leaf(Tensor::new(&[1], vec![dp.s_alpha]).expect("one")),
                    s_beta: leaf(Tensor::new(&[1], vec![dp.s_beta]).expect("one")),
                    norm_gain: match &dp.norm {
                        DhcNorm::Rms => None,
                        DhcNorm::LayerNorm { gain } => {
                            Some(leaf(Tensor::new(&[d], gain.clone()).expect("length d")))
                        }
                    },
                })
            }
        };
        Self { static_beta, static_alpha, dynamic }
    }
}

/// Output of the width connection for a batch of tokens.
#[derive(Debug, Clone, Copy)]
pub struct TapeWidth {
    /// `[N, d]`
    pub layer_input: Var,
    /// `[N, n, d]`
    pub carried: Var,
    /// `[n, 1]` for static sites, `[N, n, 1]` for dynamic ones.
    pub beta: Var,
    /// `[n, n+1]` for static sites, `[N, n, n+1]` for dynamic ones.
    pub alpha: Var,
}

pub fn width_on_tape<T: Real>(
    tape: &mut Tape<T>,
    cfg: &HcSiteConfig,
    site: &SiteVars,
    h: Var,
) -> Result<TapeWidth> {
    let shape = tape.shape(h).to_vec();
    if shape.len() != 3 || shape[1] != cfg.n {
        return Err(Error::dim(format!("hyper hidden must be [N, {}, d], got {shape:?}", cfg.n)));
    }
    let (tokens, n, d) = (shape[0], shape[1], shape[2]);
    let static_beta = tape.reshape(site.static_beta, &[n, 1])?;
    let (alpha, beta) = match (&site.dynamic, cfg.dynamic) {
        (None, false) => (site.static_alpha, static_beta),
        (Some(dv), true) => {
            let hn = match (cfg.norm, dv.norm_gain) {
                (DhcNormKind::Rms, _) => tape.rms_norm(h, cfg.eps)?,
                (DhcNormKind::LayerNorm, Some(g)) => tape.layer_norm_affine(h, Some(g), None, cfg.eps)?,
                (DhcNormKind::LayerNorm, None) => {
                    return Err(Error::config("layer-norm dynamic site needs a norm gain"))
                }
            };
            let mut pa = tape.matmul(hn, dv.w_alpha)?;
            let wb = tape.reshape(dv.w_beta, &[d, 1])?;
            let mut pb = tape.matmul(hn, wb)?;
            if cfg.tanh {
                pa = tape.tanh(pa);
                pb = tape.tanh(pb);
            }
            let pa = tape.mul(pa, dv.s_alpha)?;
            let pb = tape.mul(pb, dv.s_beta)?;
            (tape.add(pa, site.static_alpha)?, tape.add(pb, static_beta)?)
        }
        _ => return Err(Error::config("site variables do not match the static/dynamic setting")),
    };
    let mix = tape.matmul_t(alpha, h, true, false)?;
    let layer_input = tape.select(mix, 1, 0)?;
    let carried = tape.slice(mix, 1, 1, n)?;
    debug_assert_eq!(tape.shape(layer_input), [tokens, d]);
    Ok(TapeWidth { layer_input, carried, beta, alpha })
}

/// `out[t, i] = beta[t, i] * y[t] + carried[t, i]` for layer output `y` `[N, d]`.
pub fn depth_on_tape<T: Real>(tape: &mut Tape<T>, width: &TapeWidth, y: Var) -> Result<Var> {
    let cs = tape.shape(width.carried).to_vec();
    if tape.shape(y) != [cs[0], cs[2]] {
        return Err(Error::dim(format!(
            "layer output must be [{}, {}], got {:?}",
            cs[0],
            cs[2],
            tape.shape(y)
        )));
    }
    let y = tape.reshape(y, &[cs[0], 1, cs[2]])?;
    let scaled = tape.mul(width.beta, y)?;
    tape.add(scaled, width.carried)
}

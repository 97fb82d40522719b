//! Static and dynamic hyper-connections.
//!
//! A hyper-connection keeps `n` hidden rows per token (the hyper hidden
//! matrix `H`, shape `n x d`) and wraps one layer `T` with an
//! `(n+1) x (n+1)` connection matrix
//!
//! ```text
//!     | 0    B   |        B:   1 x n   weights of the layer output
//!     | A_m  A_r |        A_m: n x 1   mixes rows into the layer input
//!                         A_r: n x n   mixes rows into the carried state
//! ```
//!
//! so that `H_out = B^T T(H^T A_m)^T + A_r^T H`. The dynamic variant adds an
//! input-dependent, tanh-bounded correction to every coefficient.
//!
//! This module holds the per-token reference implementation. [`site`] records
//! the same computation on a [`Tape`](crate::numerics::Tape) for whole batches.

pub mod site;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor, NORM_EPS};

pub use site::{depth_on_tape, width_on_tape, DhcNormKind, DynamicVars, HcSiteConfig, SiteVars, TapeWidth};

/// Initial value of both dynamic gates `s_alpha` and `s_beta`.
pub const GATE_INIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct StaticHcParams<T> {
    /// `B`, length `n`.
    pub beta: Vec<T>,
    /// `A_m`, length `n`.
    pub alpha_m: Vec<T>,
    /// `A_r`, `n x n`.
    pub alpha_r: Tensor<T>,
}

impl<T: Real> StaticHcParams<T> {
    /// Pre-Norm-equivalent start for HC site `k`: `B = 1`, `A_m = e_{k mod n}`, `A_r = I`.
    pub fn init(k: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("expansion rate must be >= 1"));
        }
        let mut alpha_m = vec![T::zero(); n];
        alpha_m[k % n] = T::one();
        Ok(Self { beta: vec![T::one(); n], alpha_m, alpha_r: Tensor::eye(n) })
    }

    pub fn new(beta: Vec<T>, alpha_m: Vec<T>, alpha_r: Tensor<T>) -> Result<Self> {
        let n = beta.len();
        if n == 0 || alpha_m.len() != n || alpha_r.shape() != [n, n] {
            return Err(Error::dim(format!(
                "static HC params need B[{n}], A_m[{n}], A_r[{n}x{n}]; got A_m[{}], A_r{:?}",
                alpha_m.len(),
                alpha_r.shape()
            )));
        }
        Ok(Self { beta, alpha_m, alpha_r })
    }

    /// From the stored layout: `beta` `[n]` and `alpha = [A_m | A_r]` `[n, n+1]`.
    pub fn from_tensors(beta: &Tensor<T>, alpha: &Tensor<T>) -> Result<Self> {
        let n = beta.numel();
        if alpha.shape() != [n, n + 1] {
            return Err(Error::dim(format!("alpha must be [{n}, {}], got {:?}", n + 1, alpha.shape())));
        }
        let alpha_m = (0..n).map(|i| alpha.at(&[i, 0])).collect();
        let alpha_r = alpha.slice_axis(1, 1, n)?;
        Self::new(beta.data().to_vec(), alpha_m, alpha_r)
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    /// `[A_m | A_r]`, shape `[n, n+1]`.
    pub fn alpha(&self) -> Tensor<T> {
        let n = self.n();
        let mut a = Tensor::zeros(&[n, n + 1]);
        for i in 0..n {
            a.set(&[i, 0], self.alpha_m[i]);
            for j in 0..n {
                a.set(&[i, j + 1], self.alpha_r.at(&[i, j]));
            }
        }
        a
    }

    pub fn beta_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.n()], self.beta.clone()).expect("length n")
    }

    pub fn cast<U: Real>(&self) -> StaticHcParams<U> {
        StaticHcParams {
            beta: self.beta.iter().map(|x| U::c(x.f64())).collect(),
            alpha_m: self.alpha_m.iter().map(|x| U::c(x.f64())).collect(),
            alpha_r: self.alpha_r.cast(),
        }
    }
}

/// Normalization applied to each row of `H` before the dynamic projection.
#[derive(Debug, Clone, PartialEq)]
pub enum DhcNorm<T> {
    /// Non-parametric RMS norm.
    Rms,
    /// Layer norm with a learnable per-feature gain.
    LayerNorm { gain: Vec<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicHcParams<T> {
    pub stat: StaticHcParams<T>,
    /// `W_beta`, length `d`.
    pub w_beta: Vec<T>,
    /// `[W_m | W_r]`, shape `[d, n+1]`.
    pub w_alpha: Tensor<T>,
    pub s_beta: T,
    pub s_alpha: T,
    pub norm: DhcNorm<T>,
    pub eps: f64,
}

impl<T: Real> DynamicHcParams<T> {
    /// Static part per [`StaticHcParams::init`], dynamic weights zero, gates at [`GATE_INIT`].
    pub fn init(k: usize, n: usize, d: usize) -> Result<Self> {
        Ok(Self {
            stat: StaticHcParams::init(k, n)?,
            w_beta: vec![T::zero(); d],
            w_alpha: Tensor::zeros(&[d, n + 1]),
            s_beta: T::c(GATE_INIT),
            s_alpha: T::c(GATE_INIT),
            norm: DhcNorm::Rms,
            eps: NORM_EPS,
        })
    }

    pub fn d(&self) -> usize {
        self.w_beta.len()
    }

    fn normalize(&self, row: &[T]) -> Vec<T> {
        let dn = T::c(row.len() as f64);
        let eps = T::c(self.eps);
        match &self.norm {
            DhcNorm::Rms => {
                let ms = row.iter().map(|&v| v * v).sum::<T>() / dn + eps;
                let r = if ms > T::zero() { T::one() / ms.sqrt() } else { T::zero() };
                row.iter().map(|&v| v * r).collect()
            }
            DhcNorm::LayerNorm { gain } => {
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn + eps;
                let r = if var > T::zero() { T::one() / var.sqrt() } else { T::zero() };
                row.iter().zip(gain).map(|(&v, &g)| (v - mean) * r * g).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HcParams<T> {
    Static(StaticHcParams<T>),
    Dynamic(DynamicHcParams<T>),
}

impl<T: Real> HcParams<T> {
    pub fn n(&self) -> usize {
        self.static_part().n()
    }

    pub fn static_part(&self) -> &StaticHcParams<T> {
        match self {
            HcParams::Static(s) => s,
            HcParams::Dynamic(d) => &d.stat,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, HcParams::Dynamic(_))
    }
}

/// Per-token hyper hidden matrix, `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperHidden<T>(Tensor<T>);

impl<T: Real> HyperHidden<T> {
    pub fn new(rows: Tensor<T>) -> Result<Self> {
        if rows.rank() != 2 || rows.shape()[0] == 0 {
            return Err(Error::dim(format!("hyper hidden must be n x d, got {:?}", rows.shape())));
        }
        Ok(Self(rows))
    }

    /// `n` copies of `h` stacked as rows.
    pub fn replicate(h: &[T], n: usize) -> Self {
        let data = (0..n).flat_map(|_| h.iter().copied()).collect();
        Self(Tensor::new(&[n, h.len()], data).expect("n x d"))
    }

    pub fn n(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn rows(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    /// Row-wise sum, the sum-pool that feeds the output head.
    pub fn sum_rows(&self) -> Vec<T> {
        self.0.sum_axis(0).expect("rank 2").into_data()
    }
}

/// Effective coefficients of one site for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T> {
    /// `[A_m | A_r]`, shape `[n, n+1]`.
    pub alpha: Tensor<T>,
    /// `B`, length `n`.
    pub beta: Vec<T>,
}

/// Static coefficients, or static plus `s * tanh(norm(H) W)` for dynamic
/// sites. With `tanh_enabled = false` the projection enters without tanh.
pub fn coefficients<T: Real>(
    params: &HcParams<T>,
    h: &HyperHidden<T>,
    tanh_enabled: bool,
) -> Result<Coefficients<T>> {
    let n = params.n();
    if h.n() != n {
        return Err(Error::dim(format!("hyper hidden has {} rows, params expect {n}", h.n())));
    }
    let stat = params.static_part();
    let mut alpha = stat.alpha();
    let mut beta = stat.beta.clone();
    if let HcParams::Dynamic(dp) = params {
        if h.d() != dp.d() || dp.w_alpha.shape() != [dp.d(), n + 1] {
            return Err(Error::dim(format!(
                "dynamic weights are for d = {}, hyper hidden has d = {}",
                dp.d(),
                h.d()
            )));
        }
        if let DhcNorm::LayerNorm { gain } = &dp.norm {
            if gain.len() != dp.d() {
                return Err(Error::dim("norm gain length differs from d"));
            }
        }
        let squash = |x: T| if tanh_enabled { x.tanh() } else { x };
        for i in 0..n {
            let hn = dp.normalize(h.row(i));
            for j in 0..=n {
                let proj: T = (0..dp.d()).map(|c| hn[c] * dp.w_alpha.at(&[c, j])).sum();
                alpha.set(&[i, j], dp.s_alpha * squash(proj) + alpha.at(&[i, j]));
            }
            let proj: T = hn.iter().zip(&dp.w_beta).map(|(&a, &b)| a * b).sum();
            beta[i] = dp.s_beta * squash(proj) + beta[i];
        }
    }
    Ok(Coefficients { alpha, beta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthResult<T> {
    /// `h_0 = A_m^T H`, the layer input.
    pub layer_input: Vec<T>,
    /// `H' = A_r^T H`.
    pub carried: Tensor<T>,
    /// Effective `B` for this token.
    pub beta_eff: Vec<T>,
    /// Effective `[A_m | A_r]` for this token.
    pub alpha_eff: Tensor<T>,
}

pub fn width_connection<T: Real>(
    params: &HcParams<T>,
    h: &HyperHidden<T>,
    tanh_enabled: bool,
) -> Result<WidthResult<T>> {
    let coef = coefficients(params, h, tanh_enabled)?;
    // [n+1, d] = alpha^T H
    let mix = coef.alpha.transpose()?.matmul(h.rows())?;
    let layer_input = mix.row(0).to_vec();
    let carried = mix.slice_axis(0, 1, params.n())?;
    Ok(WidthResult { layer_input, carried, beta_eff: coef.beta, alpha_eff: coef.alpha })
}

/// Row `i` of the result is `beta_eff[i] * layer_out + carried[i]`.
pub fn depth_connection<T: Real>(width: &WidthResult<T>, layer_out: &[T]) -> Result<HyperHidden<T>> {
    let (n, d) = (width.carried.shape()[0], width.carried.shape()[1]);
    if layer_out.len() != d || width.beta_eff.len() != n {
        return Err(Error::dim(format!(
            "depth connection: layer output has {} features, carried is {n} x {d}",
            layer_out.len()
        )));
    }
    let mut out = width.carried.clone();
    for i in 0..n {
        for (c, &y) in layer_out.iter().enumerate() {
            let v = width.beta_eff[i] * y + width.carried.at(&[i, c]);
            out.set(&[i, c], v);
        }
    }
    HyperHidden::new(out)
}

/// One hyper-connected layer: width connection, a single evaluation of
/// `layer` on the mixed input, then depth connection.
pub fn apply<T: Real, F>(
    params: &HcParams<T>,
    layer: F,
    h: &HyperHidden<T>,
    tanh_enabled: bool,
) -> Result<HyperHidden<T>>
where
    F: FnOnce(&[T]) -> Result<Vec<T>>,
{
    let width = width_connection(params, h, tanh_enabled)?;
    let out = layer(&width.layer_input)?;
    depth_connection(&width, &out)
}

/// The `(n+1) x (n+1)` connection matrix with a zero corner.
#[derive(Debug, Clone, PartialEq)]
pub struct HcMatrix<T>(Tensor<T>);

impl<T: Real> HcMatrix<T> {
    pub fn from_tensor(m: Tensor<T>) -> Result<Self> {
        let s = m.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] < 2 {
            return Err(Error::dim(format!("HC matrix must be (n+1) x (n+1), n >= 1; got {s:?}")));
        }
        if m.at(&[0, 0]) != T::zero() {
            return Err(Error::Domain("HC matrix corner entry must be 0".into()));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::from_tensor(Tensor::from_rows(rows)?)
    }

    pub fn from_parts(beta: &[T], alpha: &Tensor<T>) -> Result<Self> {
        let n = beta.len();
        if alpha.shape() != [n, n + 1] {
            return Err(Error::dim("alpha must be n x (n+1)"));
        }
        let mut m = Tensor::zeros(&[n + 1, n + 1]);
        for j in 0..n {
            m.set(&[0, j + 1], beta[j]);
        }
        for i in 0..n {
            for j in 0..=n {
                m.set(&[i + 1, j], alpha.at(&[i, j]));
            }
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.shape()[0] - 1
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.0.at(&[i, j])
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn to_static(&self) -> StaticHcParams<T> {
        let n = self.n();
        let beta = (1..=n).map(|j| self.at(0, j)).collect();
        let alpha_m = (1..=n).map(|i| self.at(i, 0)).collect();
        let alpha_r = self.0.slice_axis(0, 1, n).and_then(|t| t.slice_axis(1, 1, n)).expect("in range");
        StaticHcParams { beta, alpha_m, alpha_r }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        let k = self.n() + 1;
        (0..k).map(|i| self.0.row(i).to_vec()).collect()
    }
}

/// Connection matrix of `params`; dynamic sites need the token's `H`.
pub fn assemble_matrix<T: Real>(
    params: &HcParams<T>,
    h: Option<&HyperHidden<T>>,
    tanh_enabled: bool,
) -> Result<HcMatrix<T>> {
    match (params, h) {
        (HcParams::Static(s), _) => HcMatrix::from_parts(&s.beta, &s.alpha()),
        (HcParams::Dynamic(_), None) => Err(Error::MissingInput(
            "dynamic hyper-connection matrix depends on the hyper hidden input".into(),
        )),
        (HcParams::Dynamic(_), Some(h)) => {
            let c = coefficients(params, h, tanh_enabled)?;
            HcMatrix::from_parts(&c.beta, &c.alpha)
        }
    }
}

/// Depth-connection matrix `[B; diag(A_r)]` (`2 x n`) and width-connection
/// matrix `[A_m | A_r]` (`n x (n+1)`).
pub fn decouple<T: Real>(params: &StaticHcParams<T>) -> (Tensor<T>, Tensor<T>) {
    let n = params.n();
    let mut depth = Tensor::zeros(&[2, n]);
    for j in 0..n {
        depth.set(&[0, j], params.beta[j]);
        depth.set(&[1, j], params.alpha_r.at(&[j, j]));
    }
    (depth, params.alpha())
}

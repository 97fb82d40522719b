//! Dense cross-layer connection weights implied by a stack of hyper-connections.
//!
//! Layers are numbered `0..=L+1`: layer 0 is the embedding (an identity
//! layer whose output is replicated into every row, so its `B` is all ones),
//! layers `1..=L` are the HC sites in depth order, and layer `L+1` is the
//! sum-pool before the output head (its `A_m` is all ones).

use crate::error::{Error, Result};
use crate::hyperconn::{depth_connection, width_connection, HcParams, HyperHidden, StaticHcParams};
use crate::model::Model;
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedConnections {
    /// Number of HC sites.
    pub l: usize,
    pub n: usize,
    /// `c0[k][j]`: weight of layer `j`'s output in layer `k`'s input, `(L+2) x (L+2)`.
    pub c0: Tensor<f64>,
    /// `ci[i][k][j]`: weight of layer `j`'s output in row `i` of the carried
    /// state at layer `k`; row `L+1` is the final hyper hidden matrix.
    pub ci: Vec<Tensor<f64>>,
}

fn check_sites(sites: &[StaticHcParams<f64>]) -> Result<usize> {
    let Some(first) = sites.first() else {
        return Err(Error::config("unfolding needs at least one site"));
    };
    let n = first.n();
    if let Some(k) = sites.iter().position(|s| s.n() != n) {
        return Err(Error::Config(format!("site {k} has expansion rate {}, site 0 has {n}", sites[k].n())));
    }
    Ok(n)
}

/// `c0[k][j] = B^j (prod_{t=j+1}^{k-1} A_r^t) A_m^k` and
/// `ci[i][k][j] = (B^j prod_{t=j+1}^{k} A_r^t)_i`, evaluated by accumulating
/// the row vector `B^j A_r^{j+1} ... A_r^t` left to right.
pub fn unfold(sites: &[StaticHcParams<f64>]) -> Result<UnfoldedConnections> {
    let n = check_sites(sites)?;
    let l = sites.len();
    let size = l + 2;
    let mut c0 = Tensor::zeros(&[size, size]);
    let mut ci = vec![Tensor::zeros(&[size, size]); n];
    let ones = vec![1.0; n];
    let a_m = |k: usize| if k == l + 1 { &ones } else { &sites[k - 1].alpha_m };
    for j in 0..=l {
        // running product B^j A_r^{j+1} ... A_r^{k-1}
        let mut v: Vec<f64> = if j == 0 { ones.clone() } else { sites[j - 1].beta.clone() };
        for k in j + 1..=l + 1 {
            let am = a_m(k);
            c0.set(&[k, j], v.iter().zip(am).map(|(a, b)| a * b).sum());
            if k <= l {
                let ar = &sites[k - 1].alpha_r;
                v = (0..n).map(|c| (0..n).map(|r| v[r] * ar.at(&[r, c])).sum()).collect();
            }
            for (i, m) in ci.iter_mut().enumerate() {
                m.set(&[k, j], v[i]);
            }
        }
    }
    Ok(UnfoldedConnections { l, n, c0, ci })
}

/// The same matrices by running the real recurrence on tag vectors: the
/// embedding is `e_0`, layer `k` ignores its input and emits `e_k`, and every
/// input or state read back off the run holds its per-layer weights as entries.
pub fn unfold_by_tags(sites: &[StaticHcParams<f64>]) -> Result<UnfoldedConnections> {
    let n = check_sites(sites)?;
    let l = sites.len();
    let size = l + 2;
    let tag = |k: usize| {
        let mut e = vec![0.0; size];
        e[k] = 1.0;
        e
    };
    let mut c0 = Tensor::zeros(&[size, size]);
    let mut ci = vec![Tensor::zeros(&[size, size]); n];
    let mut h = HyperHidden::replicate(&tag(0), n);
    for (idx, site) in sites.iter().enumerate() {
        let k = idx + 1;
        let params = HcParams::Static(site.clone());
        let width = width_connection(&params, &h, true)?;
        for j in 0..size {
            c0.set(&[k, j], width.layer_input[j]);
            for (i, m) in ci.iter_mut().enumerate() {
                m.set(&[k, j], width.carried.at(&[i, j]));
            }
        }
        h = depth_connection(&width, &tag(k))?;
    }
    let pooled = h.sum_rows();
    for j in 0..size {
        c0.set(&[l + 1, j], pooled[j]);
        for (i, m) in ci.iter_mut().enumerate() {
            m.set(&[l + 1, j], h.row(i)[j]);
        }
    }
    Ok(UnfoldedConnections { l, n, c0, ci })
}

fn nested(m: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..m.shape()[0]).map(|k| m.row(k).to_vec()).collect()
}

impl UnfoldedConnections {
    /// `{"l", "n", "c0", "ci"}` with matrices as nested row arrays.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "l": self.l,
            "n": self.n,
            "c0": nested(&self.c0),
            "ci": self.ci.iter().map(nested).collect::<Vec<_>>(),
        })
    }

    /// Largest entrywise gap to `other` over `c0` and every `ci`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.l != other.l || self.n != other.n {
            return Err(Error::dim("unfolded matrices of different sizes"));
        }
        let mut worst = self.c0.max_abs_diff(&other.c0)?;
        for (a, b) in self.ci.iter().zip(&other.ci) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        Ok(worst)
    }
}

fn label(k: usize, l: usize) -> String {
    match k {
        0 => "emb".into(),
        k if k == l + 1 => "out".into(),
        k => k.to_string(),
    }
}

/// CSV with a header row and column of layer labels (`emb`, `1..L`, `out`).
pub fn matrix_csv(m: &Tensor<f64>) -> String {
    let size = m.shape()[0];
    let l = size - 2;
    let mut out = String::from("layer");
    for j in 0..size {
        out.push(',');
        out.push_str(&label(j, l));
    }
    out.push('\n');
    for k in 0..size {
        out.push_str(&label(k, l));
        for j in 0..size {
            out.push(',');
            out.push_str(&format!("{}", m.at(&[k, j])));
        }
        out.push('\n');
    }
    out
}

/// Per-site connection weights of an HC model: the static values for SHC,
/// token-averaged effective values for DHC.
pub fn site_weights<T: Real>(model: &Model<T>, batch: &[Vec<usize>]) -> Result<Vec<StaticHcParams<f64>>> {
    match model.config().variant {
        crate::model::Variant::Shc => (0..model.config().sites())
            .map(|k| Ok(model.hc_params(k)?.static_part().cast()))
            .collect(),
        crate::model::Variant::Dhc => dhc_effective_weights(model, batch),
        v => Err(Error::Config(format!("variant {} has no hyper-connections", v.name()))),
    }
}

/// Dynamic coefficients averaged over every token position of `batch`, per site.
pub fn dhc_effective_weights<T: Real>(model: &Model<T>, batch: &[Vec<usize>]) -> Result<Vec<StaticHcParams<f64>>> {
    if model.config().variant != crate::model::Variant::Dhc {
        return Err(Error::Config(format!(
            "effective dynamic weights need a dhc model, got {}",
            model.config().variant.name()
        )));
    }
    let trace = model.trace(batch)?;
    trace
        .site_coeffs
        .iter()
        .map(|c| {
            let (alpha, beta) = c.as_ref().ok_or_else(|| Error::config("missing dynamic coefficients"))?;
            let tokens = alpha.shape()[0] as f64;
            let alpha: Tensor<f64> = alpha.cast::<f64>().sum_axis(0)?.scale(1.0 / tokens);
            let beta: Tensor<f64> = beta.cast::<f64>().sum_axis(0)?.scale(1.0 / tokens);
            let n = alpha.shape()[0];
            StaticHcParams::from_tensors(&beta.reshape(&[n])?, &alpha)
        })
        .collect()
}

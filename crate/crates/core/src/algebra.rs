//! Fixed connection matrices that reproduce classic layer arrangements.
//!
//! Pre-Norm and Post-Norm residual connections, `n` sequential copies of a
//! residual chain, and groups of `n` parallel layers can all be written as
//! non-trainable hyper-connections. The `check_*` functions replay each
//! equivalence numerically against a direct implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hyperconn::{apply, HcMatrix, HcParams, HyperHidden};
use crate::numerics::Tensor;

/// Population moments of a layer's input and output over the feature axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualStats {
    pub sigma_i: f64,
    pub sigma_o: f64,
    pub sigma_io: f64,
}

impl ResidualStats {
    pub fn new(sigma_i: f64, sigma_o: f64, sigma_io: f64) -> Result<Self> {
        if sigma_i < 0.0 || sigma_o < 0.0 {
            return Err(Error::Domain("standard deviations must be non-negative".into()));
        }
        Ok(Self { sigma_i, sigma_o, sigma_io })
    }

    /// Empirical stats of one `(input, output)` pair, dividing by `d`.
    pub fn from_pair(input: &[f64], output: &[f64]) -> Result<Self> {
        if input.len() != output.len() || input.is_empty() {
            return Err(Error::dim("input and output must have the same nonzero length"));
        }
        let d = input.len() as f64;
        let mi = input.iter().sum::<f64>() / d;
        let mo = output.iter().sum::<f64>() / d;
        let (mut vi, mut vo, mut cov) = (0.0, 0.0, 0.0);
        for (&a, &b) in input.iter().zip(output) {
            vi += (a - mi) * (a - mi);
            vo += (b - mo) * (b - mo);
            cov += (a - mi) * (b - mo);
        }
        Self::new((vi / d).sqrt(), (vo / d).sqrt(), cov / d)
    }

    /// `sigma_i^2 + sigma_o^2 + 2 sigma_io`, the variance of the sum.
    pub fn radicand(&self) -> f64 {
        self.sigma_i * self.sigma_i + self.sigma_o * self.sigma_o + 2.0 * self.sigma_io
    }
}

/// `[[0, 1], [1, 1]]`
pub fn prenorm_matrix() -> HcMatrix<f64> {
    HcMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]).expect("valid layout")
}

/// `[[0, w], [1, w]]` with `w = 1 / sqrt(radicand)`.
pub fn postnorm_matrix(stats: &ResidualStats) -> Result<HcMatrix<f64>> {
    let r = stats.radicand();
    if !(r > 0.0) {
        return Err(Error::Domain(format!("post-norm radicand must be positive, got {r}")));
    }
    let w = 1.0 / r.sqrt();
    HcMatrix::from_rows(&[vec![0.0, w], vec![1.0, w]])
}

/// `[0, 1^T; e_0, I]`: every row of `H` follows the same residual chain.
pub fn sequential_matrix(n: usize) -> Result<HcMatrix<f64>> {
    if n == 0 {
        return Err(Error::config("expansion rate must be >= 1"));
    }
    let mut m = Tensor::zeros(&[n + 1, n + 1]);
    for j in 1..=n {
        m.set(&[0, j], 1.0);
        m.set(&[j, j], 1.0);
    }
    m.set(&[1, 0], 1.0);
    HcMatrix::from_tensor(m)
}

/// Matrices for positions `0..n` of a group of parallel layers.
///
/// Position 0 sums the previous group's rows into the layer input and into
/// every carried row, writing its own output to row 0. Position `i > 0` reads
/// row `i` and adds its output back to row `i`.
pub fn parallel_matrices(n: usize) -> Result<Vec<HcMatrix<f64>>> {
    if n == 0 {
        return Err(Error::config("expansion rate must be >= 1"));
    }
    (0..n)
        .map(|i| {
            let mut m = Tensor::zeros(&[n + 1, n + 1]);
            m.set(&[0, i + 1], 1.0);
            for r in 1..=n {
                if i == 0 {
                    m.set(&[r, 0], 1.0);
                    for c in 1..=n {
                        m.set(&[r, c], 1.0);
                    }
                } else {
                    m.set(&[r, r], 1.0);
                }
            }
            if i > 0 {
                m.set(&[i + 1, 0], 1.0);
            }
            HcMatrix::from_tensor(m)
        })
        .collect()
}

/// `y = tanh(W x + b)` with `W` scaled to unit Frobenius norm, so its spectral
/// norm is at most 1. With `recenter`, the output has its mean removed.
#[derive(Debug, Clone)]
pub struct RandomLayer {
    pub w: Tensor<f64>,
    pub b: Vec<f64>,
    pub recenter: bool,
}

impl RandomLayer {
    pub fn sample<R: Rng + ?Sized>(d: usize, recenter: bool, rng: &mut R) -> Self {
        let g = Tensor::<f64>::randn(&[d, d], 1.0, rng);
        let fro = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let b = Tensor::<f64>::randn(&[d], 0.5, rng).into_data();
        Self { w: g.scale(1.0 / fro), b, recenter }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut y: Vec<f64> =
            (0..d).map(|i| ((0..d).map(|j| self.w.at(&[i, j]) * x[j]).sum::<f64>() + self.b[i]).tanh()).collect();
        if self.recenter {
            let mean = y.iter().sum::<f64>() / d as f64;
            y.iter_mut().for_each(|v| *v -= mean);
        }
        y
    }
}

/// Run `layers` through connection matrices `matrices[k]`, returning `H` after every layer.
pub fn run_hc_stack(
    matrices: &[HcMatrix<f64>],
    layers: &[RandomLayer],
    h0: &HyperHidden<f64>,
) -> Result<Vec<HyperHidden<f64>>> {
    if matrices.len() != layers.len() {
        return Err(Error::config("one connection matrix per layer is required"));
    }
    let mut h = h0.clone();
    let mut out = Vec::with_capacity(layers.len());
    for (m, layer) in matrices.iter().zip(layers) {
        let params = HcParams::Static(m.to_static());
        h = apply(&params, |x| Ok(layer.forward(x)), &h, true)?;
        out.push(h.clone());
    }
    Ok(out)
}

fn residual(layer: &RandomLayer, h: &[f64]) -> Vec<f64> {
    layer.forward(h).iter().zip(h).map(|(y, x)| y + x).collect()
}

/// Population layer norm without gain, bias, or epsilon.
pub fn layer_norm(x: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    x.iter().map(|v| (v - mean) / var.sqrt()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub name: String,
    pub trials: usize,
    pub max_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

impl EquivalenceReport {
    fn new(name: impl Into<String>, trials: usize, max_deviation: f64, tol: f64) -> Self {
        // NaN deviation must fail
        let passed = max_deviation <= tol;
        Self { name: name.into(), trials, max_deviation, tol, passed }
    }
}

/// Evaluate `a` and `b` on every input and report the largest entrywise gap.
pub fn verify_equivalence<I, A, B>(
    name: &str,
    mut a: A,
    mut b: B,
    inputs: &[I],
    tol: f64,
) -> Result<EquivalenceReport>
where
    A: FnMut(&I) -> Result<Tensor<f64>>,
    B: FnMut(&I) -> Result<Tensor<f64>>,
{
    let mut worst: f64 = 0.0;
    for input in inputs {
        let (x, y) = (a(input)?, b(input)?);
        if x.shape() != y.shape() {
            return Err(Error::Config(format!(
                "{name}: builders disagree on output shape, {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let dev = x.max_abs_diff(&y)?;
        worst = if dev.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(dev) };
    }
    Ok(EquivalenceReport::new(name, inputs.len(), worst, tol))
}

fn vector(x: Vec<f64>) -> Tensor<f64> {
    let n = x.len();
    Tensor::new(&[n], x).expect("1-d")
}

fn perturbed(m: HcMatrix<f64>, delta: f64) -> HcMatrix<f64> {
    if delta == 0.0 {
        return m;
    }
    let mut t = m.tensor().clone();
    let v = t.at(&[0, 1]);
    t.set(&[0, 1], v + delta);
    HcMatrix::from_tensor(t).expect("corner untouched")
}

/// Pre-Norm matrix against `h + T(h)`. `perturb` is added to `B` for negative controls.
pub fn check_prenorm(trials: usize, d: usize, seed: u64, perturb: f64) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(RandomLayer, Vec<f64>)> = (0..trials)
        .map(|_| (RandomLayer::sample(d, false, &mut rng), Tensor::<f64>::randn(&[d], 1.0, &mut rng).into_data()))
        .collect();
    let m = perturbed(prenorm_matrix(), perturb);
    verify_equivalence(
        &format!("prenorm d={d}"),
        |(layer, h)| {
            let out = run_hc_stack(std::slice::from_ref(&m), std::slice::from_ref(layer), &HyperHidden::replicate(h, 1))?;
            Ok(vector(out[0].row(0).to_vec()))
        },
        |(layer, h)| Ok(vector(residual(layer, h))),
        &inputs,
        1e-12,
    )
}

/// Post-Norm matrix built from each pair's own stats against `LayerNorm(h + T(h))`.
///
/// Inputs are zero-mean (they are the previous LayerNorm's output) and the
/// layer re-centers its output, so the sum has zero mean.
pub fn check_postnorm(trials: usize, d: usize, seed: u64, perturb: f64) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(RandomLayer, Vec<f64>)> = (0..trials)
        .map(|_| {
            let h = Tensor::<f64>::randn(&[d], 1.0, &mut rng).into_data();
            (RandomLayer::sample(d, true, &mut rng), layer_norm(&h))
        })
        .collect();
    verify_equivalence(
        &format!("postnorm d={d}"),
        |(layer, h)| {
            let stats = ResidualStats::from_pair(h, &layer.forward(h))?;
            let m = perturbed(postnorm_matrix(&stats)?, perturb);
            let out = run_hc_stack(&[m], std::slice::from_ref(layer), &HyperHidden::replicate(h, 1))?;
            Ok(vector(out[0].row(0).to_vec()))
        },
        |(layer, h)| Ok(vector(layer_norm(&residual(layer, h)))),
        &inputs,
        1e-10,
    )
}

/// `sigma_{h+h'} = sqrt(radicand)` on random pairs.
pub fn check_sum_std(trials: usize, d: usize, seed: u64) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|_| {
            let a = Tensor::<f64>::randn(&[d], 1.0, &mut rng).into_data();
            let b = Tensor::<f64>::randn(&[d], 2.0, &mut rng).into_data();
            (a, b)
        })
        .collect();
    verify_equivalence(
        &format!("sum std d={d}"),
        |(a, b)| Ok(vector(vec![ResidualStats::from_pair(a, b)?.radicand().sqrt()])),
        |(a, b)| {
            let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            Ok(vector(vec![ResidualStats::from_pair(&s, &s)?.sigma_i]))
        },
        &inputs,
        1e-10,
    )
}

struct StackTrial {
    layers: Vec<RandomLayer>,
    h0: Vec<f64>,
}

fn stack_trials(trials: usize, max_layers: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<StackTrial> {
    (0..trials)
        .map(|_| {
            let l = rng.random_range(1..=max_layers);
            StackTrial {
                layers: (0..l).map(|_| RandomLayer::sample(d, false, rng)).collect(),
                h0: Tensor::<f64>::randn(&[d], 1.0, rng).into_data(),
            }
        })
        .collect()
}

/// Sequential matrix on every layer: at each depth every row must equal the
/// residual chain. The deviation covers all rows, so it also bounds the row spread.
pub fn check_sequential(
    n: usize,
    max_layers: usize,
    trials: usize,
    seed: u64,
    perturb: f64,
) -> Result<EquivalenceReport> {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = stack_trials(trials, max_layers, d, &mut rng);
    let m = perturbed(sequential_matrix(n)?, perturb);
    verify_equivalence(
        &format!("sequential n={n}"),
        |t: &StackTrial| {
            let ms = vec![m.clone(); t.layers.len()];
            let hs = run_hc_stack(&ms, &t.layers, &HyperHidden::replicate(&t.h0, n))?;
            let data = hs.into_iter().flat_map(|h| h.into_tensor().into_data()).collect();
            Tensor::new(&[t.layers.len(), n, d], data)
        },
        |t: &StackTrial| {
            let mut h = t.h0.clone();
            let mut data = Vec::new();
            for layer in &t.layers {
                h = residual(layer, &h);
                for _ in 0..n {
                    data.extend_from_slice(&h);
                }
            }
            Tensor::new(&[t.layers.len(), n, d], data)
        },
        &inputs,
        1e-12,
    )
}

/// Parallel matrices cycled over groups of `n` layers against
/// `h_{g+1} = sum_i (T_i(h_g) + h_g)`, compared through the row sum of `H` at
/// every group boundary. The chain starts from the row sum of the replicated input.
pub fn check_parallel(
    n: usize,
    max_layers: usize,
    trials: usize,
    seed: u64,
    perturb: f64,
) -> Result<EquivalenceReport> {
    let d = 8;
    let groups_max = (max_layers / n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<StackTrial> = stack_trials(trials, groups_max, d, &mut rng)
        .into_iter()
        .map(|t| {
            let groups = t.layers.len();
            let layers = (0..groups * n).map(|_| RandomLayer::sample(d, false, &mut rng)).collect();
            StackTrial { layers, h0: t.h0 }
        })
        .collect();
    let mut ms = parallel_matrices(n)?;
    ms[0] = perturbed(ms[0].clone(), perturb);
    verify_equivalence(
        &format!("parallel n={n}"),
        |t: &StackTrial| {
            let wiring: Vec<HcMatrix<f64>> = (0..t.layers.len()).map(|k| ms[k % n].clone()).collect();
            let hs = run_hc_stack(&wiring, &t.layers, &HyperHidden::replicate(&t.h0, n))?;
            let data = hs.iter().skip(n - 1).step_by(n).flat_map(HyperHidden::sum_rows).collect();
            Tensor::new(&[t.layers.len() / n, d], data)
        },
        |t: &StackTrial| {
            let mut h: Vec<f64> = t.h0.iter().map(|v| v * n as f64).collect();
            let mut data = Vec::new();
            for group in t.layers.chunks(n) {
                let mut next = vec![0.0; d];
                for layer in group {
                    for (acc, v) in next.iter_mut().zip(residual(layer, &h)) {
                        *acc += v;
                    }
                }
                h = next;
                data.extend_from_slice(&h);
            }
            Tensor::new(&[t.layers.len() / n, d], data)
        },
        &inputs,
        1e-12,
    )
}

/// The full set of algebraic checks at their reference sizes.
pub fn algebra_suite(seed: u64, perturb: f64) -> Result<Vec<EquivalenceReport>> {
    let mut out = vec![check_prenorm(100, 16, seed, perturb)?];
    for d in [8, 64] {
        out.push(check_postnorm(1000, d, seed + d as u64, perturb)?);
        out.push(check_sum_std(1000, d, seed + 100 + d as u64)?);
    }
    for n in 1..=4 {
        out.push(check_sequential(n, 8, 100, seed + 200 + n as u64, perturb)?);
        out.push(check_parallel(n, 8, 100, seed + 300 + n as u64, perturb)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_matrices() {
        assert_eq!(prenorm_matrix().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(prenorm_matrix().n(), 1);
        assert_eq!(
            sequential_matrix(2).unwrap().to_rows(),
            vec![vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]
        );
        assert_eq!(sequential_matrix(1).unwrap(), prenorm_matrix());
        let p = parallel_matrices(2).unwrap();
        assert_eq!(p[0].to_rows(), vec![vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]);
        assert_eq!(p[1].to_rows(), vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
        assert_eq!(parallel_matrices(1).unwrap(), vec![prenorm_matrix()]);
        assert!(matches!(sequential_matrix(0), Err(Error::Config(_))));
    }

    #[test]
    fn postnorm_weight_and_domain() {
        let m = postnorm_matrix(&ResidualStats::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        let w = 1.0 / 2f64.sqrt();
        assert_eq!(m.to_rows(), vec![vec![0.0, w], vec![1.0, w]]);
        let s = ResidualStats::new(1.5, 1.5, -2.25).unwrap();
        assert!(matches!(postnorm_matrix(&s), Err(Error::Domain(_))));
        assert!(matches!(ResidualStats::new(-1.0, 1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn random_layer_is_contractive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = RandomLayer::sample(6, true, &mut rng);
        let y = l.forward(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]);
        assert!(y.iter().sum::<f64>().abs() < 1e-14);
        let fro: f64 = l.w.data().iter().map(|v| v * v).sum();
        assert!((fro - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let err = verify_equivalence(
            "mismatch",
            |_: &()| Ok(Tensor::zeros(&[2])),
            |_: &()| Ok(Tensor::zeros(&[3])),
            &[()],
            1e-12,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn perturbed_matrix_fails() {
        let r = check_prenorm(5, 8, 1, 1e-3).unwrap();
        assert!(!r.passed);
        assert!(r.max_deviation > 1e-6);
        assert!(!check_sequential(3, 4, 5, 2, 1e-3).unwrap().passed);
    }
}

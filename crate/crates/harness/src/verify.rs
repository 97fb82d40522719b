//! Self-checks runnable from the command line.
//!
//! With `inject_fault` each suite corrupts one side of its comparisons by a
//! small amount, so the named checks are expected to fail.

use hc_core::algebra::algebra_suite;
use hc_core::analysis::{count_params, estimate_flops, olmo_1b, unfold, unfold_by_tags};
use hc_core::hyperconn::{DhcNormKind, StaticHcParams};
use hc_core::model::{Model, ModelConfig, Variant};
use hc_core::numerics::{grad_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Algebra,
    Gradients,
    Unfolding,
    Accounting,
    All,
}

impl Suite {
    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Algebra, Suite::Gradients, Suite::Unfolding, Suite::Accounting],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Algebra => "algebra",
            Suite::Gradients => "gradients",
            Suite::Unfolding => "unfolding",
            Suite::Accounting => "accounting",
            Suite::All => "all",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    /// `suite/check`
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(suite: Suite, name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: format!("{}/{name}", suite.name()), passed, detail }
}

pub fn verify(suite: Suite, inject_fault: bool) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for s in suite.parts() {
        checks.extend(match s {
            Suite::Algebra => algebra(inject_fault)?,
            Suite::Gradients => gradients(inject_fault)?,
            Suite::Unfolding => unfolding(inject_fault)?,
            Suite::Accounting => accounting(inject_fault)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(VerifyReport { passed: checks.iter().all(|c| c.passed), checks })
}

fn algebra(fault: bool) -> Result<Vec<CheckResult>> {
    let perturb = if fault { 1e-3 } else { 0.0 };
    Ok(algebra_suite(0, perturb)?
        .into_iter()
        .map(|r| {
            let detail = format!("{} trials, max deviation {:e} (tol {:e})", r.trials, r.max_deviation, r.tol);
            check(Suite::Algebra, &r.name, r.passed, detail)
        })
        .collect())
}

/// Full-model gradients of a two-block dynamic model against central
/// differences of the plain loss.
fn gradients(fault: bool) -> Result<Vec<CheckResult>> {
    let cfg = ModelConfig { vocab: 16, max_seq_len: 6, seed: 21, ..ModelConfig::tiny(Variant::Dhc, 2) };
    let init = Model::<f64>::init(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let params: Vec<Tensor<f64>> = init
        .params()
        .iter()
        .zip(init.layout().specs())
        .map(|(p, s)| {
            let std = if s.name.contains("_hc.") { 0.3 } else { 0.1 };
            p.add(&Tensor::randn(p.shape(), std, &mut rng))
        })
        .collect::<std::result::Result<_, _>>()?;
    let batch: Vec<Vec<usize>> = (0..2).map(|_| (0..6).map(|_| rng.random_range(0..16)).collect()).collect();
    let model = Model::from_params(&cfg, params.clone())?;
    let (_, mut analytic) = model.loss_and_grads(&batch, None)?;
    let names: Vec<String> = model.layout().specs().iter().map(|s| s.name.clone()).collect();
    if fault {
        let i = names.iter().position(|n| n.contains("_hc.")).unwrap_or(0);
        let g = &mut analytic[i];
        let bump = 1e-3 * g.max_abs().max(1.0);
        g.data_mut()[0] += bump;
    }
    let report = grad_check(
        &names,
        |ps| Model::from_params(&cfg, ps.to_vec())?.loss(&batch),
        &params,
        &analytic,
        1e-5,
        1e-6,
    )?;
    Ok(report
        .entries
        .iter()
        .map(|e| {
            let detail = format!("{} entries, relative error {:e}", e.numel, e.max_rel_err);
            check(Suite::Gradients, &e.name, e.max_rel_err < report.tol, detail)
        })
        .collect())
}

fn unfolding(fault: bool) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let l = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let mut sites = Vec::with_capacity(l);
        for _ in 0..l {
            let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<f64>>();
            let (beta, alpha_m, alpha_r) = (v(n), v(n), v(n * n));
            sites.push(StaticHcParams::new(beta, alpha_m, Tensor::new(&[n, n], alpha_r)?)?);
        }
        let oracle = unfold_by_tags(&sites)?;
        if fault {
            let v = sites[0].alpha_r.at(&[0, 0]);
            sites[0].alpha_r.set(&[0, 0], v + 1e-6);
            sites[0].beta[0] += 1e-6;
        }
        worst = worst.max(unfold(&sites)?.max_abs_diff(&oracle)?);
    }
    let mut out = vec![check(
        Suite::Unfolding,
        "tag_oracle",
        worst <= 1e-10,
        format!("50 random stacks, max deviation {worst:e} (tol 1e-10)"),
    )];

    let mut init_ok = true;
    for n in [1, 2, 4] {
        let l = 6;
        let sites: Vec<_> = (0..l).map(|k| StaticHcParams::init(k, n)).collect::<std::result::Result<_, _>>()?;
        let u = unfold(&sites)?;
        for k in 0..l + 2 {
            for j in 0..l + 2 {
                let want = match (k, j) {
                    _ if j >= k => 0.0,
                    _ if k == l + 1 => n as f64,
                    _ => 1.0,
                };
                init_ok &= u.c0.at(&[k, j]) == want;
            }
        }
    }
    out.push(check(
        Suite::Unfolding,
        "init_lower_triangular",
        init_ok,
        "ones below the diagonal for every layer, n in the sum-pool row".into(),
    ));
    Ok(out)
}

fn accounting(fault: bool) -> Result<Vec<CheckResult>> {
    let skew = u64::from(fault);
    let mut out = Vec::new();
    let shc = count_params(&olmo_1b(Variant::Shc, 4))?;
    out.push(check(Suite::Accounting, "shc_n4_extra_params", shc.hc_formula == 768, format!("{}", shc.hc_formula)));
    let dhc = count_params(&olmo_1b(Variant::Dhc, 4))?;
    out.push(check(
        Suite::Accounting,
        "dhc_n4_extra_params",
        dhc.hc_formula == 394_048,
        format!("{}", dhc.hc_formula),
    ));

    let mut mismatches = Vec::new();
    let mut configs = 0;
    for variant in [Variant::Prenorm, Variant::Postnorm, Variant::Shc, Variant::Dhc] {
        for n in 1..=4 {
            for (tie, pos, norm) in [(true, true, DhcNormKind::Rms), (false, false, DhcNormKind::LayerNorm)] {
                let cfg = ModelConfig {
                    tie_embeddings: tie,
                    learned_pos_emb: pos,
                    dhc_norm: norm,
                    ..ModelConfig::tiny(variant, n)
                };
                let c = count_params(&cfg)?;
                configs += 1;
                if c.total_formula != c.total_measured + skew || c.hc_formula != c.hc_measured + skew {
                    mismatches.push(format!("{}/n={n}", variant.name()));
                }
            }
        }
    }
    out.push(check(
        Suite::Accounting,
        "formula_matches_tensors",
        mismatches.is_empty(),
        format!("{configs} configs, mismatches: {mismatches:?}"),
    ));

    let rate = estimate_flops(&olmo_1b(Variant::Dhc, 4))?.delta_rate();
    out.push(check(
        Suite::Accounting,
        "dhc_n4_flop_delta",
        (0.001..=0.003).contains(&rate),
        format!("{:.4}% (band 0.1%..0.3%)", rate * 100.0),
    ));
    Ok(out)
}

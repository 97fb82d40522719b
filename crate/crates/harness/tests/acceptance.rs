//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 8 compares dynamic hyper-connections with the Pre-Norm baseline
//! on a small byte-level language model and is advisory: only non-finite
//! losses fail the run, the comparison itself is reported.

mod common;

use std::time::Instant;

use common::{synthetic_text, write_corpus};
use hc_core::algebra::{check_parallel, check_postnorm, check_sequential};
use hc_core::analysis::{count_params, estimate_flops, olmo_1b, unfold, unfold_by_tags};
use hc_core::hyperconn::{DhcNormKind, StaticHcParams};
use hc_core::model::{site_prefix, Model, ModelConfig, Variant};
use hc_core::numerics::Tensor;
use hc_harness::train::METRICS_FILE;
use hc_harness::{train, verify, RunConfig, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn random_tokens(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn prenorm_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for layers in [2, 4] {
        let cfg = ModelConfig { layers, seed: 40 + layers as u64, ..ModelConfig::tiny(Variant::Prenorm, 1) };
        let base = Model::<f64>::init(&cfg).unwrap();
        let ids = random_tokens(64, 256, layers as u64);
        let want = base.logits(&ids).unwrap();
        for variant in [Variant::Shc, Variant::Dhc] {
            for n in [1, 2, 4] {
                let mut m = Model::<f64>::init(&ModelConfig { variant, n, seed: 99, ..cfg.clone() }).unwrap();
                m.transplant_from(&base);
                worst = worst.max(m.logits(&ids).unwrap().max_abs_diff(&want).unwrap());
            }
        }
    }
    outcome(worst <= 1e-12, format!("max |logit diff| {worst:e} over shc/dhc, n 1/2/4, L 2/4 (tol 1e-12)"))
}

fn postnorm_equivalence() -> Outcome {
    let reports: Vec<_> = [8, 64].iter().map(|&d| check_postnorm(1000, d, 7 + d as u64, 0.0).unwrap()).collect();
    let worst = reports.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    outcome(reports.iter().all(|r| r.passed), format!("1000 vectors, d 8/64, max deviation {worst:e} (tol 1e-10)"))
}

fn duality() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for n in 1..=4 {
        for r in [check_sequential(n, 8, 100, 11 + n as u64, 0.0).unwrap(), check_parallel(n, 8, 100, 21 + n as u64, 0.0).unwrap()] {
            ok &= r.passed;
            worst = worst.max(r.max_deviation);
        }
    }
    outcome(ok, format!("sequential and parallel wirings, n 1..4, up to 8 layers, 100 trials each, max deviation {worst:e} (tol 1e-12)"))
}

fn unfolding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (l, n) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let sites: Vec<_> = (0..l)
            .map(|_| {
                let mut v = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
                let (b, am, ar) = (v(n), v(n), v(n * n));
                StaticHcParams::new(b, am, Tensor::new(&[n, n], ar).unwrap()).unwrap()
            })
            .collect();
        worst = worst.max(unfold(&sites).unwrap().max_abs_diff(&unfold_by_tags(&sites).unwrap()).unwrap());
    }
    let mut pattern = true;
    for n in [1, 2, 3, 4] {
        for l in [1, 4, 8] {
            let sites: Vec<_> = (0..l).map(|k| StaticHcParams::init(k, n).unwrap()).collect();
            let u = unfold(&sites).unwrap();
            for k in 0..l + 2 {
                for j in 0..l + 2 {
                    let want = if j >= k {
                        0.0
                    } else if k == l + 1 {
                        n as f64
                    } else {
                        1.0
                    };
                    pattern &= u.c0.at(&[k, j]) == want;
                }
            }
        }
    }
    outcome(
        worst <= 1e-10 && pattern,
        format!(
            "50 random stacks vs tag oracle, max deviation {worst:e} (tol 1e-10); init c0 all-ones below the diagonal \
             in layer rows, n in the sum-pool row: {pattern}"
        ),
    )
}

fn accounting() -> Outcome {
    let shc = count_params(&olmo_1b(Variant::Shc, 4)).unwrap().hc_formula;
    let dhc = count_params(&olmo_1b(Variant::Dhc, 4)).unwrap().hc_formula;
    let mut grid_ok = true;
    let mut configs = 0;
    for variant in [Variant::Prenorm, Variant::Postnorm, Variant::Shc, Variant::Dhc] {
        for n in 1..=4 {
            for layers in [1, 2, 5] {
                for (tie, pos, norm) in [(true, true, DhcNormKind::Rms), (false, false, DhcNormKind::LayerNorm)] {
                    let cfg = ModelConfig {
                        layers,
                        tie_embeddings: tie,
                        learned_pos_emb: pos,
                        dhc_norm: norm,
                        ..ModelConfig::tiny(variant, n)
                    };
                    let c = count_params(&cfg).unwrap();
                    let measured = Model::<f32>::init(&cfg).unwrap().num_params() as u64;
                    grid_ok &= c.total_formula == measured && c.hc_formula == c.hc_measured;
                    configs += 1;
                }
            }
        }
    }
    let rate = estimate_flops(&olmo_1b(Variant::Dhc, 4)).unwrap().delta_rate();
    outcome(
        shc == 768 && dhc == 394_048 && grid_ok && (0.001..=0.003).contains(&rate),
        format!(
            "extra params shc {shc}, dhc {dhc}; formula == tensors on {configs} configs: {grid_ok}; dhc x4 FLOP delta {:.3}%",
            rate * 100.0
        ),
    )
}

fn gradients() -> Outcome {
    let report = verify(Suite::Gradients, false).unwrap();
    let failed: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
    outcome(
        report.passed,
        format!("{} parameter tensors of a 2-block d=32 n=2 dhc model, failing: {failed:?} (tol 1e-6)", report.checks.len()),
    )
}

fn dynamic_bound() -> Outcome {
    let cfg = ModelConfig { max_seq_len: 100, seed: 3, ..ModelConfig::tiny(Variant::Dhc, 4) };
    let mut m = Model::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 0..cfg.sites() {
        let p = site_prefix(k);
        m.set_param(&format!("{p}.dynamic_alpha_fn"), Tensor::randn(&[32, 5], 3.0, &mut rng)).unwrap();
        m.set_param(&format!("{p}.dynamic_beta_fn"), Tensor::randn(&[32], 3.0, &mut rng)).unwrap();
        for s in ["dynamic_alpha_scale", "dynamic_beta_scale"] {
            m.set_param(&format!("{p}.{s}"), Tensor::new(&[1], vec![rng.random_range(-0.8..0.8)]).unwrap()).unwrap();
        }
    }
    let batch: Vec<Vec<usize>> = (0..100).map(|s| random_tokens(100, 256, 1000 + s)).collect();
    let trace = m.trace(&batch).unwrap();
    let mut within = true;
    let mut tightest: f64 = 0.0;
    // delta is recovered by subtracting the static value, which costs an ulp of it
    let mut excess = f64::NEG_INFINITY;
    for (k, coeffs) in trace.site_coeffs.iter().enumerate() {
        let (alpha, beta) = coeffs.as_ref().unwrap();
        let p = site_prefix(k);
        let sa = m.param(&format!("{p}.dynamic_alpha_scale")).unwrap().item().abs();
        let sb = m.param(&format!("{p}.dynamic_beta_scale")).unwrap().item().abs();
        let stat = m.hc_params(k).unwrap().static_part().clone();
        let (sa_t, sb_t) = (stat.alpha(), stat.beta_tensor());
        let (na, nb) = (sa_t.numel(), sb_t.numel());
        for t in 0..alpha.shape()[0] {
            for i in 0..na {
                let d = (alpha.data()[t * na + i] - sa_t.data()[i]).abs();
                let slack = 4.0 * f64::EPSILON * sa_t.data()[i].abs().max(1.0);
                within &= d <= sa + slack;
                tightest = tightest.max(d / sa);
                excess = excess.max(d - sa);
            }
            for i in 0..nb {
                let d = (beta.data()[t * nb + i] - sb_t.data()[i]).abs();
                let slack = 4.0 * f64::EPSILON * sb_t.data()[i].abs().max(1.0);
                within &= d <= sb + slack;
                tightest = tightest.max(d / sb);
                excess = excess.max(d - sb);
            }
        }
    }

    let shc = Model::<f64>::init(&ModelConfig { seed: 5, ..ModelConfig::tiny(Variant::Shc, 4) }).unwrap();
    let mut zeroed = Model::<f64>::init(&ModelConfig { seed: 6, ..ModelConfig::tiny(Variant::Dhc, 4) }).unwrap();
    zeroed.transplant_from(&shc);
    let ids = random_tokens(64, 256, 8);
    let bitwise = zeroed.logits(&ids).unwrap() == shc.logits(&ids).unwrap();
    outcome(
        within && bitwise,
        format!("10000 tokens, largest |delta| / gate = {tightest:.6}, largest |delta| - gate = {excess:e}; zeroed dynamic weights bitwise equal to static: {bitwise}"),
    )
}

fn comparison_run(variant: Variant, n: usize, seed: u64, corpus: std::path::PathBuf, out: std::path::PathBuf) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ffn: 256,
            vocab: 256,
            max_seq_len: 128,
            seed,
            ..ModelConfig::tiny(variant, n)
        },
        steps: 5000,
        batch_size: 4,
        seq_len: 128,
        lr: 2e-3,
        warmup_steps: 200,
        min_lr_fraction: 0.1,
        weight_decay: 0.1,
        grad_clip: 1.0,
        beta1: 0.9,
        beta2: 0.95,
        adam_eps: 1e-8,
        eval_interval: 1000,
        eval_batches: Some(16),
        checkpoint_interval: 0,
        train_corpus: vec![corpus],
        val_corpus: None,
        val_fraction: 0.05,
        out_dir: out,
        seed,
        record_wallclock: true,
    }
}

fn soft_comparison() -> (Outcome, bool) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "corpus.txt", &synthetic_text(1 << 20, 77));
    let mut means = Vec::new();
    let mut finite = true;
    let mut per_run = Vec::new();
    for (variant, n) in [(Variant::Prenorm, 1), (Variant::Dhc, 4)] {
        let mut losses = Vec::new();
        for seed in 1..=3 {
            let out = dir.path().join(format!("{}_{seed}", variant.name()));
            match train(&comparison_run(variant, n, seed, corpus.clone(), out)) {
                Ok(o) => {
                    finite &= o.records.iter().all(|r| r.train_loss.is_finite());
                    losses.push(o.final_val_loss);
                }
                Err(e) => {
                    finite = false;
                    per_run.push(format!("{} seed {seed}: {e}", variant.name()));
                    losses.push(f64::NAN);
                }
            }
        }
        per_run.push(format!("{} {:.4?}", variant.name(), losses));
        means.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    let direction = means[1] <= means[0];
    let detail = format!(
        "mean final val loss prenorm {:.4}, dhc x4 {:.4} (dhc <= prenorm: {direction}); all losses finite: {finite}; {}",
        means[0],
        means[1],
        per_run.join("; ")
    );
    (outcome(direction && finite, detail), finite)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "corpus.txt", &synthetic_text(100_000, 5));
    let streams: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let mut run = common::small_run(Variant::Dhc, 4, corpus.clone(), dir.path().join(name));
            run.steps = 200;
            run.warmup_steps = 20;
            run.eval_interval = 50;
            run.model.dropout = 0.1;
            train(&run).unwrap();
            std::fs::read_to_string(dir.path().join(name).join(METRICS_FILE)).unwrap()
        })
        .collect();
    let records = streams[0].lines().count();
    outcome(streams[0] == streams[1], format!("two 200-step runs, {records} metric records, byte-identical: {}", streams[0] == streams[1]))
}

fn main() {
    let mut failures = 0;
    let report = |id: &str, name: &str, advisory: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let tag = match (o.passed, advisory) {
            (true, _) => "PASS",
            (false, true) => "ADVISORY-FAIL",
            (false, false) => "FAIL",
        };
        println!("[{tag}] criterion {id} {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
        o.passed
    };
    let primary: [(&str, &str, fn() -> Outcome); 8] = [
        ("1", "pre-norm equivalence", prenorm_equivalence),
        ("2", "post-norm equivalence", postnorm_equivalence),
        ("3", "sequential-parallel duality", duality),
        ("4", "unfolded connections", unfolding),
        ("5", "cost accounting", accounting),
        ("6", "full-model gradients", gradients),
        ("7", "dynamic coefficient bound", dynamic_bound),
        ("9", "reproducibility", reproducibility),
    ];
    for (id, name, f) in primary {
        if !report(id, name, false, &mut || f()) {
            failures += 1;
        }
    }
    let mut finite = true;
    report("8", "dhc vs pre-norm training (advisory)", true, &mut || {
        let (o, fin) = soft_comparison();
        finite = fin;
        o
    });
    if !finite {
        println!("criterion 8: non-finite loss in a training run");
        failures += 1;
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all primary acceptance criteria passed");
}

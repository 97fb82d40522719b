use hc_core::hyperconn::{
    self, apply, depth_on_tape, width_on_tape, DhcNorm, DhcNormKind, DynamicHcParams, HcParams,
    HcSiteConfig, HyperHidden, SiteVars, StaticHcParams,
};
use hc_core::numerics::{check_scalar_fn, Real, ScalarFn, Tape, Tensor, Var};
use hc_core::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_static(n: usize, rng: &mut ChaCha8Rng) -> StaticHcParams<f64> {
    StaticHcParams::new(
        Tensor::<f64>::randn(&[n], 1.0, rng).into_data(),
        Tensor::<f64>::randn(&[n], 1.0, rng).into_data(),
        Tensor::randn(&[n, n], 1.0, rng),
    )
    .unwrap()
}

fn random_dynamic(n: usize, d: usize, layer_norm: bool, rng: &mut ChaCha8Rng) -> DynamicHcParams<f64> {
    let mut p = DynamicHcParams::init(0, n, d).unwrap();
    p.stat = random_static(n, rng);
    p.w_alpha = Tensor::randn(&[d, n + 1], 0.5, rng);
    p.w_beta = Tensor::<f64>::randn(&[d], 0.5, rng).into_data();
    p.s_alpha = 0.3;
    p.s_beta = -0.2;
    if layer_norm {
        p.norm = DhcNorm::LayerNorm { gain: Tensor::<f64>::uniform(&[d], 0.5, 1.5, rng).into_data() };
    }
    p
}

/// `y = tanh(W x)`
fn layer(w: &Tensor<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
    move |x: &[f64]| {
        let d = x.len();
        Ok((0..d).map(|i| (0..d).map(|j| w.at(&[i, j]) * x[j]).sum::<f64>().tanh()).collect())
    }
}

/// Direct evaluation of `B^T T(H^T A_m)^T + A_r^T H` with explicit loops.
fn closed_form(p: &StaticHcParams<f64>, w: &Tensor<f64>, h: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (n, d) = (h.shape()[0], h.shape()[1]);
    let mut h0 = vec![0.0; d];
    for c in 0..d {
        for r in 0..n {
            h0[c] += p.alpha_m[r] * h.at(&[r, c]);
        }
    }
    let y: Vec<f64> = (0..d).map(|i| (0..d).map(|j| w.at(&[i, j]) * h0[j]).sum::<f64>().tanh()).collect();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|c| {
                    let carried: f64 = (0..n).map(|r| p.alpha_r.at(&[r, i]) * h.at(&[r, c])).sum();
                    p.beta[i] * y[c] + carried
                })
                .collect()
        })
        .collect()
}

#[test]
fn apply_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 6;
    for n in [1, 2, 4, 8] {
        let p = random_static(n, &mut rng);
        let w = Tensor::randn(&[d, d], 0.4, &mut rng);
        let h = Tensor::randn(&[n, d], 1.0, &mut rng);
        let out = apply(&HcParams::Static(p.clone()), layer(&w), &HyperHidden::new(h.clone()).unwrap(), true)
            .unwrap();
        let expect = closed_form(&p, &w, &h);
        for i in 0..n {
            for c in 0..d {
                assert!((out.row(i)[c] - expect[i][c]).abs() < 1e-12, "n={n} row {i} col {c}");
            }
        }
    }
}

#[test]
fn layer_is_evaluated_once() {
    let p = HcParams::Static(StaticHcParams::<f64>::init(0, 4).unwrap());
    let h = HyperHidden::replicate(&[1.0, 2.0], 4);
    let mut calls = 0;
    apply(
        &p,
        |x| {
            calls += 1;
            Ok(x.to_vec())
        },
        &h,
        true,
    )
    .unwrap();
    assert_eq!(calls, 1);
}

#[test]
fn n1_reproduces_residual_connection() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let w = Tensor::randn(&[5, 5], 0.5, &mut rng);
    let h: Vec<f64> = Tensor::<f64>::randn(&[5], 1.0, &mut rng).into_data();
    let p = HcParams::Static(StaticHcParams::init(0, 1).unwrap());
    let out = apply(&p, layer(&w), &HyperHidden::replicate(&h, 1), true).unwrap();
    let t = layer(&w)(&h).unwrap();
    for c in 0..5 {
        assert_eq!(out.row(0)[c], h[c] + t[c]);
    }
}

fn tape_forward(params: &HcParams<f64>, cfg: &HcSiteConfig, w: &Tensor<f64>, hs: &[Tensor<f64>]) -> Tensor<f64> {
    let (n, d) = (hs[0].shape()[0], hs[0].shape()[1]);
    let mut tape = Tape::<f64>::new();
    let site = SiteVars::from_params(&mut tape, params, false);
    let data = hs.iter().flat_map(|h| h.data().iter().copied()).collect();
    let h = tape.constant(Tensor::new(&[hs.len(), n, d], data).unwrap());
    let wv = tape.constant(w.clone());
    let width = width_on_tape(&mut tape, cfg, &site, h).unwrap();
    let y = tape.matmul_t(width.layer_input, wv, false, true).unwrap();
    let y = tape.tanh(y);
    let out = depth_on_tape(&mut tape, &width, y).unwrap();
    tape.value(out).clone()
}

#[test]
fn tape_site_matches_per_token_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (n, d, tokens) = (3, 5, 4);
    let w = Tensor::randn(&[d, d], 0.5, &mut rng);
    let hs: Vec<Tensor<f64>> = (0..tokens).map(|_| Tensor::randn(&[n, d], 1.0, &mut rng)).collect();
    let cases = [
        (HcParams::Static(random_static(n, &mut rng)), false, true, DhcNormKind::Rms),
        (HcParams::Dynamic(random_dynamic(n, d, false, &mut rng)), true, true, DhcNormKind::Rms),
        (HcParams::Dynamic(random_dynamic(n, d, false, &mut rng)), true, false, DhcNormKind::Rms),
        (HcParams::Dynamic(random_dynamic(n, d, true, &mut rng)), true, true, DhcNormKind::LayerNorm),
    ];
    for (params, dynamic, tanh, norm) in cases {
        let cfg = HcSiteConfig { n, dynamic, tanh, norm, eps: hc_core::numerics::NORM_EPS };
        let batched = tape_forward(&params, &cfg, &w, &hs);
        for (t, h) in hs.iter().enumerate() {
            let out = apply(&params, layer(&w), &HyperHidden::new(h.clone()).unwrap(), tanh).unwrap();
            let row = batched.slice_axis(0, t, 1).unwrap().reshape(&[n, d]).unwrap();
            assert!(row.max_abs_diff(out.rows()).unwrap() < 1e-12, "dynamic={dynamic} tanh={tanh}");
        }
    }
}

#[test]
fn tape_dynamic_at_init_equals_static_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (n, d) = (4, 8);
    let w = Tensor::randn(&[d, d], 0.5, &mut rng);
    let hs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(&[n, d], 1.0, &mut rng)).collect();
    let dp = DynamicHcParams::init(5, n, d).unwrap();
    let sp = HcParams::Static(dp.stat.clone());
    let eps = hc_core::numerics::NORM_EPS;
    let a = tape_forward(&sp, &HcSiteConfig { n, dynamic: false, tanh: true, norm: DhcNormKind::Rms, eps }, &w, &hs);
    let b = tape_forward(
        &HcParams::Dynamic(dp),
        &HcSiteConfig { n, dynamic: true, tanh: true, norm: DhcNormKind::Rms, eps },
        &w,
        &hs,
    );
    assert_eq!(a, b);
}

/// Sum of squares of one hyper-connected layer's output; params are
/// `[H, static_beta, static_alpha, W_layer, (w_alpha, w_beta, s_alpha, s_beta)]`.
struct SiteObjective {
    cfg: HcSiteConfig,
}

impl ScalarFn for SiteObjective {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, p: &[Var]) -> Result<Var> {
        let dynamic = self.cfg.dynamic.then(|| hyperconn::DynamicVars {
            w_alpha: p[4],
            w_beta: p[5],
            s_alpha: p[6],
            s_beta: p[7],
            norm_gain: None,
        });
        let site = SiteVars { static_beta: p[1], static_alpha: p[2], dynamic };
        let width = width_on_tape(tape, &self.cfg, &site, p[0])?;
        let y = tape.matmul(width.layer_input, p[3])?;
        let y = tape.tanh(y);
        let out = depth_on_tape(tape, &width, y)?;
        let sq = tape.mul(out, out)?;
        Ok(tape.sum(sq))
    }
}

#[test]
fn site_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (tokens, n, d) = (3, 2, 4);
    for dynamic in [false, true] {
        let mut params = vec![
            Tensor::randn(&[tokens, n, d], 1.0, &mut rng),
            Tensor::randn(&[n], 1.0, &mut rng),
            Tensor::randn(&[n, n + 1], 1.0, &mut rng),
            Tensor::randn(&[d, d], 0.5, &mut rng),
        ];
        if dynamic {
            params.push(Tensor::randn(&[d, n + 1], 0.5, &mut rng));
            params.push(Tensor::randn(&[d], 0.5, &mut rng));
            params.push(Tensor::new(&[1], vec![0.4]).unwrap());
            params.push(Tensor::new(&[1], vec![-0.3]).unwrap());
        }
        let f = SiteObjective { cfg: HcSiteConfig { n, dynamic, tanh: true, norm: DhcNormKind::Rms, eps: 1e-5 } };
        let report = check_scalar_fn::<f64, _>(&f, &params, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "dynamic={dynamic}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_carry_with_zero_beta_preserves_rows(
        n in 1usize..6, d in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = StaticHcParams::new(vec![0.0; n], Tensor::<f64>::randn(&[n], 1.0, &mut rng).into_data(), Tensor::eye(n)).unwrap();
        let h = HyperHidden::new(Tensor::randn(&[n, d], 1.0, &mut rng)).unwrap();
        let out = apply(&HcParams::Static(p), |x| Ok(x.iter().map(|v| v.sin()).collect()), &h, true).unwrap();
        prop_assert_eq!(out, h);
    }

    #[test]
    fn dynamic_coefficients_stay_within_gate(
        n in 1usize..5, d in 2usize..8, scale in 0.1f64..50.0, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = DynamicHcParams::<f64>::init(0, n, d).unwrap();
        p.w_alpha = Tensor::randn(&[d, n + 1], scale, &mut rng);
        p.w_beta = Tensor::<f64>::randn(&[d], scale, &mut rng).into_data();
        let stat = p.stat.clone();
        let p = HcParams::Dynamic(p);
        let h = HyperHidden::new(Tensor::randn(&[n, d], scale, &mut rng)).unwrap();
        let c = hyperconn::coefficients(&p, &h, true).unwrap();
        let bound = hyperconn::GATE_INIT * (1.0 + 1e-12);
        prop_assert!(c.alpha.sub(&stat.alpha()).unwrap().max_abs() <= bound);
        for (b, s) in c.beta.iter().zip(&stat.beta) {
            prop_assert!((b - s).abs() <= bound);
        }
    }

    #[test]
    fn assembled_matrix_round_trips(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_static(n, &mut rng);
        let m = hyperconn::assemble_matrix(&HcParams::Static(p.clone()), None, true).unwrap();
        prop_assert_eq!(m.at(0, 0), 0.0);
        prop_assert_eq!(m.to_static(), p);
    }
}

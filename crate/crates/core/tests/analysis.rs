use hc_core::analysis::{
    cosine_profile, count_params, dhc_effective_weights, estimate_activation_memory, estimate_flops, olmo_1b,
    site_weights, unfold, unfold_by_tags,
};
use hc_core::hyperconn::{DhcNormKind, StaticHcParams};
use hc_core::model::{site_prefix, Model, ModelConfig, Variant};
use hc_core::numerics::Tensor;
use hc_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_site(n: usize, rng: &mut ChaCha8Rng) -> StaticHcParams<f64> {
    let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<f64>>();
    let beta = v(n);
    let alpha_m = v(n);
    let alpha_r = Tensor::new(&[n, n], v(n * n)).unwrap();
    StaticHcParams::new(beta, alpha_m, alpha_r).unwrap()
}

#[test]
fn unfolding_matches_tag_propagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let l = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let sites: Vec<_> = (0..l).map(|_| random_site(n, &mut rng)).collect();
        let a = unfold(&sites).unwrap();
        let b = unfold_by_tags(&sites).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10, "l={l} n={n}");
        for k in 0..l + 2 {
            for j in k..l + 2 {
                assert_eq!(a.c0.at(&[k, j]), 0.0);
                assert!(a.ci.iter().all(|m| m.at(&[k, j]) == 0.0));
            }
        }
    }
}

#[test]
fn unfolded_init_model_is_prenorm_pattern() {
    let m = Model::<f64>::init(&ModelConfig::tiny(Variant::Shc, 2)).unwrap();
    let u = unfold(&site_weights(&m, &[vec![1, 2, 3]]).unwrap()).unwrap();
    let size = u.l + 2;
    for k in 1..size {
        for j in 0..k {
            let want = if k == size - 1 { 2.0 } else { 1.0 };
            assert_eq!(u.c0.at(&[k, j]), want);
        }
    }
    let prenorm = Model::<f64>::init(&ModelConfig::tiny(Variant::Prenorm, 1)).unwrap();
    assert!(matches!(site_weights(&prenorm, &[vec![1]]), Err(Error::Config(_))));
}

fn perturbed_dhc(seed: u64) -> Model<f64> {
    let cfg = ModelConfig { seed, ..ModelConfig::tiny(Variant::Dhc, 3) };
    let mut m = Model::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..cfg.sites() {
        let p = site_prefix(k);
        for (name, shape) in [("dynamic_alpha_fn", vec![32, 4]), ("dynamic_beta_fn", vec![32])] {
            m.set_param(&format!("{p}.{name}"), Tensor::randn(&shape, 1.0, &mut rng)).unwrap();
        }
        for name in ["dynamic_alpha_scale", "dynamic_beta_scale"] {
            m.set_param(&format!("{p}.{name}"), Tensor::new(&[1], vec![rng.random_range(-0.5..0.5)]).unwrap()).unwrap();
        }
    }
    m
}

#[test]
fn effective_weights_of_zero_projection_are_static() {
    let m = Model::<f64>::init(&ModelConfig { seed: 4, ..ModelConfig::tiny(Variant::Dhc, 2) }).unwrap();
    let got = dhc_effective_weights(&m, &[vec![5, 6, 7, 8], vec![9, 10, 11, 12]]).unwrap();
    for (k, w) in got.iter().enumerate() {
        assert_eq!(w, m.hc_params(k).unwrap().static_part());
    }
    let shc = Model::<f64>::init(&ModelConfig::tiny(Variant::Shc, 2)).unwrap();
    assert!(matches!(dhc_effective_weights(&shc, &[vec![1]]), Err(Error::Config(_))));
}

#[test]
fn effective_weights_average_tokens() {
    let m = perturbed_dhc(8);
    let one = dhc_effective_weights(&m, &[vec![42]]).unwrap();
    let twice = dhc_effective_weights(&m, &[vec![42], vec![42]]).unwrap();
    for (a, b) in one.iter().zip(&twice) {
        assert!(a.alpha().max_abs_diff(&b.alpha()).unwrap() < 1e-14);
        assert!(a.beta_tensor().max_abs_diff(&b.beta_tensor()).unwrap() < 1e-14);
    }
    let batch = [vec![1, 50, 99, 200, 3, 17], vec![9, 9, 9, 8, 8, 8]];
    for (k, w) in dhc_effective_weights(&m, &batch).unwrap().iter().enumerate() {
        let p = site_prefix(k);
        let s_beta = m.param(&format!("{p}.dynamic_beta_scale")).unwrap().item().abs();
        let s_alpha = m.param(&format!("{p}.dynamic_alpha_scale")).unwrap().item().abs();
        let stat = m.hc_params(k).unwrap().static_part().clone();
        assert!(w.beta_tensor().max_abs_diff(&stat.beta_tensor()).unwrap() <= s_beta + 1e-12);
        assert!(w.alpha().max_abs_diff(&stat.alpha()).unwrap() <= s_alpha + 1e-12);
    }
}

#[test]
fn similarity_profile_is_bounded_and_ordered() {
    for variant in [Variant::Prenorm, Variant::Postnorm, Variant::Shc, Variant::Dhc] {
        let m = Model::<f64>::init(&ModelConfig { layers: 3, ..ModelConfig::tiny(variant, 2) }).unwrap();
        let batch = vec![(0..40).map(|i| (i * 37) % 256).collect::<Vec<_>>()];
        let p = cosine_profile(&m, &batch).unwrap();
        assert_eq!(p.rows.len(), 6);
        for r in &p.rows {
            assert_eq!(r.count + r.excluded, 40);
            assert!(-1.0 <= r.p05 && r.p05 <= r.median && r.median <= r.p95 && r.p95 <= 1.0, "{variant:?} {r:?}");
        }
    }
}

#[test]
fn parameter_formula_matches_tensors() {
    for variant in [Variant::Prenorm, Variant::Postnorm, Variant::Shc, Variant::Dhc] {
        for n in 1..=4 {
            for layers in [1, 3] {
                for (tie, pos) in [(true, true), (false, false)] {
                    for norm in [DhcNormKind::Rms, DhcNormKind::LayerNorm] {
                        let cfg = ModelConfig {
                            layers,
                            tie_embeddings: tie,
                            learned_pos_emb: pos,
                            dhc_norm: norm,
                            ..ModelConfig::tiny(variant, n)
                        };
                        let c = count_params(&cfg).unwrap();
                        assert_eq!(c.hc_formula, c.hc_measured, "{cfg:?}");
                        assert_eq!(c.total_formula, c.total_measured, "{cfg:?}");
                        assert_eq!(c.total_measured as usize, Model::<f32>::init(&cfg).unwrap().num_params());
                    }
                }
            }
        }
    }
}

#[test]
fn reference_config_costs() {
    assert_eq!(count_params(&olmo_1b(Variant::Shc, 4)).unwrap().hc_formula, 768);
    assert_eq!(count_params(&olmo_1b(Variant::Dhc, 4)).unwrap().hc_formula, 394_048);
    let rate = estimate_flops(&olmo_1b(Variant::Dhc, 4)).unwrap().delta_rate();
    assert!((0.001..=0.003).contains(&rate), "{rate}");

    let (d, l) = (2048, 16);
    let base = estimate_flops(&olmo_1b(Variant::Prenorm, 1)).unwrap();
    let shc1 = estimate_flops(&olmo_1b(Variant::Shc, 1)).unwrap();
    assert_eq!(shc1.total - base.total, 8 * d * l);
    assert!(matches!(estimate_flops(&olmo_1b(Variant::Shc, 0)), Err(Error::Config(_))));
}

#[test]
fn activation_memory_terms() {
    let m2 = estimate_activation_memory(&olmo_1b(Variant::Shc, 2), 8, 2048).unwrap();
    assert!(m2.hc / m2.baseline < 0.15);
    let m4 = estimate_activation_memory(&olmo_1b(Variant::Shc, 4), 8, 2048).unwrap();
    assert_eq!(m4.hc, 2.0 * m2.hc);
    let base = estimate_activation_memory(&olmo_1b(Variant::Prenorm, 1), 8, 2048).unwrap();
    assert_eq!(base.hc, 0.0);
    assert_eq!(base.baseline, m2.baseline);
}

//! AdamW with per-group weight decay, learning-rate schedule, and clipping.

use hc_core::model::{ParamGroup, ParamLayout};
use hc_core::numerics::{Real, Tensor};

use crate::error::{Error, Result};

/// Whether weight decay applies to a parameter group. Static connection
/// weights are the only undecayed group.
pub fn decays(group: ParamGroup) -> bool {
    match group {
        ParamGroup::Regular | ParamGroup::DynamicHc => true,
        ParamGroup::StaticHc => false,
    }
}

/// Parameter names in each group, in layout order.
pub fn group_members(layout: &ParamLayout) -> Vec<(ParamGroup, Vec<String>)> {
    [ParamGroup::Regular, ParamGroup::StaticHc, ParamGroup::DynamicHc]
        .into_iter()
        .map(|g| (g, layout.specs().iter().filter(|s| s.group == g).map(|s| s.name.clone()).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    decay: Vec<bool>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(layout: &ParamLayout, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || layout.specs().iter().map(|s| Tensor::zeros(&s.shape)).collect::<Vec<_>>();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            decay: layout.specs().iter().map(|s| decays(s.group)).collect(),
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 / (1.0 - b1.powi(self.t as i32));
        let c2 = 1.0 / (1.0 - b2.powi(self.t as i32));
        let (b1t, b2t, eps) = (T::c(b1), T::c(b2), T::c(self.eps));
        let (one_b1, one_b2) = (T::c(1.0 - b1), T::c(1.0 - b2));
        let (c1, c2, lr_t) = (T::c(c1), T::c(c2), T::c(lr));
        for i in 0..params.len() {
            let wd = if self.decay[i] { T::c(lr * self.weight_decay) } else { T::zero() };
            let p = params[i].data_mut();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                m[j] = b1t * m[j] + one_b1 * g[j];
                v[j] = b2t * v[j] + one_b2 * g[j] * g[j];
                let update = (m[j] * c1) / ((v[j] * c2).sqrt() + eps);
                p[j] = p[j] - wd * p[j] - lr_t * update;
            }
        }
        Ok(())
    }

    /// Confirm every tensor still carries its group's decay setting.
    pub fn audit(&self, layout: &ParamLayout) -> Result<()> {
        for (s, &d) in layout.specs().iter().zip(&self.decay) {
            if d != decays(s.group) {
                return Err(Error::Config(format!("{} left its weight-decay group", s.name)));
            }
        }
        Ok(())
    }

    /// First and second moments as named tensors `optim.m.<param>` / `optim.v.<param>`.
    pub fn state(&self, layout: &ParamLayout) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        for (s, (m, v)) in layout.specs().iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("optim.m.{}", s.name), m.clone()));
            out.push((format!("optim.v.{}", s.name), v.clone()));
        }
        out.push(("optim.t".into(), Tensor::scalar(T::c(self.t as f64))));
        out
    }

    /// Restore moments saved by [`AdamW::state`].
    pub fn load_state(&mut self, layout: &ParamLayout, state: &[(String, Tensor<T>)]) -> Result<()> {
        let find = |name: &str| {
            state
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Config(format!("optimizer state lacks {name}")))
        };
        for (i, s) in layout.specs().iter().enumerate() {
            let (m, v) = (find(&format!("optim.m.{}", s.name))?, find(&format!("optim.v.{}", s.name))?);
            if m.shape() != s.shape.as_slice() || v.shape() != s.shape.as_slice() {
                return Err(Error::Config(format!("optimizer state for {} has the wrong shape", s.name)));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        self.t = find("optim.t")?.item().to_f64().unwrap_or(0.0) as u64;
        Ok(())
    }
}

/// Linear warmup to `peak` over `warmup` steps, then cosine decay to
/// `peak * min_fraction` at `total`. `step` counts from 0.
pub fn learning_rate(step: u64, total: u64, warmup: u64, peak: f64, min_fraction: f64) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    let floor = peak * min_fraction;
    floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Euclidean norm over every gradient entry.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescale `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm = 0` leaves them untouched.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm && norm.is_finite() {
        let scale = T::c(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use hc_core::model::{ModelConfig, Variant};

    #[test]
    fn schedule_shape() {
        let lr = |s| learning_rate(s, 100, 10, 1.0, 0.1);
        assert!((lr(0) - 0.1).abs() < 1e-15);
        assert!((lr(9) - 1.0).abs() < 1e-15);
        assert!((lr(10) - 1.0).abs() < 1e-15);
        assert!((lr(55) - 0.55).abs() < 1e-12);
        assert!((lr(100) - 0.1).abs() < 1e-12);
        assert!((10..100).all(|s| lr(s + 1) <= lr(s)));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0f64, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        assert_eq!(clip_global_norm(&mut g, 0.0), global_norm(&g));
    }

    #[test]
    fn groups_partition_the_layout() {
        let layout = ParamLayout::new(&ModelConfig::tiny(Variant::Dhc, 2)).unwrap();
        let groups = group_members(&layout);
        let mut all: Vec<&String> = groups.iter().flat_map(|(_, names)| names).collect();
        assert_eq!(all.len(), layout.len());
        all.sort();
        all.dedup();
        assert_eq!(all.len(), layout.len());
        for (g, names) in &groups {
            for n in names {
                let static_weight = n.ends_with(".static_beta") || n.ends_with(".static_alpha");
                assert_eq!(static_weight, *g == ParamGroup::StaticHc, "{n}");
                assert_eq!(decays(*g), !static_weight);
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * sign(g) (up to eps)
        let layout = ParamLayout::new(&ModelConfig::tiny(Variant::Shc, 1)).unwrap();
        let mut opt = AdamW::<f64>::new(&layout, 0.9, 0.95, 1e-8, 0.0);
        let mut params: Vec<Tensor<f64>> = layout.specs().iter().map(|s| Tensor::zeros(&s.shape)).collect();
        let grads: Vec<Tensor<f64>> = layout.specs().iter().map(|s| Tensor::full(&s.shape, -2.0)).collect();
        opt.step(&mut params, &grads, 0.01).unwrap();
        assert!(params.iter().flat_map(|p| p.data()).all(|&x| (x - 0.01).abs() < 1e-9));
    }

    #[test]
    fn decay_skips_static_weights() {
        let layout = ParamLayout::new(&ModelConfig::tiny(Variant::Shc, 2)).unwrap();
        let mut opt = AdamW::<f64>::new(&layout, 0.9, 0.95, 1e-8, 0.5);
        let mut params: Vec<Tensor<f64>> = layout.specs().iter().map(|s| Tensor::ones(&s.shape)).collect();
        let grads: Vec<Tensor<f64>> = layout.specs().iter().map(|s| Tensor::zeros(&s.shape)).collect();
        opt.step(&mut params, &grads, 0.1).unwrap();
        for (p, s) in params.iter().zip(layout.specs()) {
            let want = if s.group == ParamGroup::StaticHc { 1.0 } else { 0.95 };
            assert!(p.data().iter().all(|&x| (x - want).abs() < 1e-15), "{}", s.name);
        }
    }

    #[test]
    fn state_round_trip() {
        let layout = ParamLayout::new(&ModelConfig::tiny(Variant::Dhc, 2)).unwrap();
        let mut opt = AdamW::<f32>::new(&layout, 0.9, 0.95, 1e-8, 0.1);
        let mut params: Vec<Tensor<f32>> = layout.specs().iter().map(|s| Tensor::ones(&s.shape)).collect();
        let grads: Vec<Tensor<f32>> = layout.specs().iter().map(|s| Tensor::full(&s.shape, 0.3)).collect();
        opt.step(&mut params, &grads, 0.1).unwrap();
        let mut fresh = AdamW::<f32>::new(&layout, 0.9, 0.95, 1e-8, 0.1);
        fresh.load_state(&layout, &opt.state(&layout)).unwrap();
        assert_eq!(fresh, opt);
    }
}

//! Adam with bias correction and a linear warm-up schedule.

use crate::error::{NnError, Result};
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rate ramps linearly from 0 over the first
/// `ceil(warmup_ratio * total_steps)` steps, then stays constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    pub fn new(base_lr: f64, warmup_ratio: f64, total_steps: u64) -> Self {
        WarmupSchedule {
            base_lr,
            warmup_steps: (warmup_ratio * total_steps as f64).ceil() as u64,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * step as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update at learning rate `lr`. Parameters without a recorded
/// gradient are treated as having zero gradient. A non-finite gradient
/// aborts before anything is modified.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Grads,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient(store.name(id).to_string()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.get(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = store.get_mut(id).data_mut();
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn store(vals: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vals.to_vec())).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[1.0, -2.0]);
        let mut st = AdamState::new(&s);
        let mut g = Grads::new(&s);
        g.accumulate(s.id("w").unwrap(), &[0.0, 0.0]);
        for _ in 0..5 {
            adam_step(&mut s, &g, &mut st, &AdamConfig::default(), 0.1).unwrap();
        }
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        // Step 1: mhat = g, vhat = g^2, so the update is lr * g / (|g| + eps).
        let mut s = store(&[0.5, 0.5, 0.5]);
        let mut st = AdamState::new(&s);
        let mut g = Grads::new(&s);
        let gv = [0.3, -4.0, 1e-3];
        g.accumulate(s.id("w").unwrap(), &gv);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &g, &mut st, &cfg, 0.01).unwrap();
        for (j, p) in s.by_name("w").unwrap().data().iter().enumerate() {
            let expect = 0.5 - 0.01 * gv[j] / (gv[j].abs() + cfg.eps);
            assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
        }
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut s = store(&[1.0]);
        let mut st = AdamState::new(&s);
        let mut g = Grads::new(&s);
        g.accumulate(s.id("w").unwrap(), &[f64::NAN]);
        let err = adam_step(&mut s, &g, &mut st, &AdamConfig::default(), 0.1).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(st.step, 0);
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn warmup_endpoints() {
        let sch = WarmupSchedule::new(1e-3, 0.03, 1000);
        assert_eq!(sch.warmup_steps, 30);
        assert_eq!(sch.lr_at(0), 0.0);
        assert_eq!(sch.lr_at(30), 1e-3);
        assert_eq!(sch.lr_at(500), 1e-3);
        assert!((sch.lr_at(15) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_warmup_is_constant() {
        let sch = WarmupSchedule::new(2e-3, 0.0, 100);
        assert_eq!(sch.lr_at(0), 2e-3);
    }
}

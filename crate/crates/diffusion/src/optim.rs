//! AdamW with linear warmup, and exponential moving averages of weights.

use serde::{Deserialize, Serialize};
use svbrdf_core::Real;

use crate::nn::{Grads, ParamStore};

/// Learning rate after `step` updates: rises linearly from 0 at step 0 to
/// `base` at `step = warmup`, constant afterwards.
pub fn warmup_lr(base: f64, step: usize, warmup: usize) -> f64 {
    if warmup == 0 || step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    m: ParamStore<T>,
    v: ParamStore<T>,
    steps: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = |p: &ParamStore<T>| {
            let mut z = ParamStore::new();
            for (name, shape, _) in p.iter() {
                z.zeros(name, shape);
            }
            z
        };
        Self {
            config,
            m: zeros(params),
            v: zeros(params),
            steps: 0,
        }
    }

    /// Restores saved moments; both must share the parameter layout.
    pub fn from_state(config: AdamWConfig, m: ParamStore<T>, v: ParamStore<T>, steps: u64) -> Option<Self> {
        m.same_layout(&v).then_some(Self { config, m, v, steps })
    }

    pub fn moments(&self) -> (&ParamStore<T>, &ParamStore<T>) {
        (&self.m, &self.v)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        assert!(params.same_layout(&self.m), "optimizer state does not match the parameters");
        self.steps += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            let v = self.v.get_mut(id);
            let p = params.get_mut(id);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let denom = (v[i] * inv_bc2).sqrt() + eps;
                p[i] = p[i] * decay - step_size * m[i] / denom;
            }
        }
    }
}

/// Exponential moving average `e <- d e + (1 - d) p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema<T> {
    pub decay: f64,
    weights: ParamStore<T>,
}

impl<T: Real> Ema<T> {
    pub fn new(params: &ParamStore<T>, decay: f64) -> Self {
        assert!((0.0..=1.0).contains(&decay), "EMA decay must lie in [0, 1]");
        Self {
            decay,
            weights: params.clone(),
        }
    }

    pub fn from_weights(weights: ParamStore<T>, decay: f64) -> Self {
        Self { decay, weights }
    }

    pub fn update(&mut self, params: &ParamStore<T>) {
        if self.decay == 0.0 {
            self.weights.clone_from(params);
            return;
        }
        let d = T::lit(self.decay);
        let one_d = T::lit(1.0 - self.decay);
        for (e, p) in self.weights.values_mut().zip(params.values()) {
            for (e, &p) in e.iter_mut().zip(p) {
                *e = d * *e + one_d * p;
            }
        }
    }

    pub fn weights(&self) -> &ParamStore<T> {
        &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: Vec<f64>) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        let n = v.len();
        p.insert("w", &[n], v);
        p
    }

    #[test]
    fn warmup_is_linear() {
        assert_eq!(warmup_lr(2e-4, 0, 100), 0.0);
        assert_eq!(warmup_lr(2e-4, 50, 100), 1e-4);
        assert_eq!(warmup_lr(2e-4, 100, 100), 2e-4);
        assert_eq!(warmup_lr(2e-4, 5000, 100), 2e-4);
        assert_eq!(warmup_lr(2e-4, 0, 0), 2e-4);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = store(vec![1.0, -1.0]);
        let mut opt = AdamW::new(&p, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut g = Grads::zeros_like(&p);
        g.get_mut(p.id("w").unwrap()).copy_from_slice(&[0.3, -5.0]);
        opt.step(&mut p, &g, 0.1);
        let w = p.get(p.id("w").unwrap());
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let mut p = store(vec![2.0]);
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        let g = Grads::zeros_like(&p);
        opt.step(&mut p, &g, 0.5);
        assert!((p.get(p.id("w").unwrap())[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut p = store(vec![0.7, 0.1]);
        let before = p.clone();
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        let mut g = Grads::zeros_like(&p);
        g.get_mut(p.id("w").unwrap()).copy_from_slice(&[1.0, 1.0]);
        opt.step(&mut p, &g, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn ema_recurrence() {
        let p0 = store(vec![0.0]);
        let mut ema = Ema::new(&p0, 0.9);
        let p1 = store(vec![1.0]);
        ema.update(&p1);
        assert!((ema.weights().get(p1.id("w").unwrap())[0] - 0.1).abs() < 1e-12);
        for _ in 0..500 {
            ema.update(&p1);
        }
        assert!((ema.weights().get(p1.id("w").unwrap())[0] - 1.0).abs() < 1e-12);
        let mut raw = Ema::new(&p0, 0.0);
        raw.update(&p1);
        assert_eq!(raw.weights(), &p1);
    }
}

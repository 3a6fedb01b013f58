//! DDPM linear-beta noise schedule expressed as noise levels.

use serde::{Deserialize, Serialize};

pub const DEFAULT_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Per-timestep `sigma_t` with the normalization pair `a_t`, `b_t`.
///
/// Index `t` runs over `1..=T`; `t = 0` is the clean signal
/// (`sigma = 0`, `a = 1`, `b = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigma: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta from `1e-4` to `0.02` over `steps` timesteps.
    pub fn linear(steps: usize) -> Self {
        assert!(steps >= 2, "a schedule needs at least two timesteps");
        let mut sigma = vec![0.0; steps + 1];
        let mut a = vec![1.0; steps + 1];
        let mut b = vec![0.0; steps + 1];
        let mut alpha_bar = 1.0;
        for t in 1..=steps {
            let beta = BETA_START + (BETA_END - BETA_START) * (t - 1) as f64 / (steps - 1) as f64;
            alpha_bar *= 1.0 - beta;
            a[t] = alpha_bar.sqrt();
            b[t] = (1.0 - alpha_bar).sqrt();
            sigma[t] = b[t] / a[t];
        }
        Self { sigma, a, b }
    }

    /// Number of noisy timesteps `T`.
    pub fn len(&self) -> usize {
        self.sigma.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    #[inline]
    pub fn a(&self, t: usize) -> f64 {
        self.a[t]
    }

    #[inline]
    pub fn b(&self, t: usize) -> f64 {
        self.b[t]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[self.len()]
    }

    /// `steps` timestep indices evenly spaced from `T` down to `1`.
    pub fn sampling_timesteps(&self, steps: usize) -> Vec<usize> {
        assert!(steps >= 1, "at least one sampling step is required");
        let big_t = self.len();
        if steps == 1 {
            return vec![big_t];
        }
        let span = (big_t - 1) as f64;
        let mut ts: Vec<usize> = (0..steps)
            .map(|i| (big_t as f64 - span * i as f64 / (steps - 1) as f64).round() as usize)
            .collect();
        ts.dedup();
        ts
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS)
    }
}

/// `(a, b)` for an arbitrary noise level.
pub fn normalization(sigma: f64) -> (f64, f64) {
    let s = (1.0 + sigma * sigma).sqrt();
    (1.0 / s, sigma / s)
}

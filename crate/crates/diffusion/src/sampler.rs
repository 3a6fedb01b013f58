//! Euler-ancestral sampling of the probability-flow ODE in sigma space.

use serde::{Deserialize, Serialize};
use svbrdf_core::rng;
use svbrdf_core::Real;

use crate::error::{Error, Result};
use crate::objective::standard_normal;
use crate::schedule::{normalization, NoiseSchedule};

pub const DEFAULT_SAMPLING_STEPS: usize = 20;

/// Anything that predicts the velocity `a n - b x` from a noisy input.
pub trait VelocityModel<T: Real> {
    /// `y` and the result are flattened channel-major latents; `cond` is the
    /// flattened condition stack when the model is conditional.
    fn velocity(&self, y: &[T], t: usize, cond: Option<&[T]>) -> Result<Vec<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    /// Ancestral noise fraction: 1 is full Euler-ancestral, 0 is plain Euler.
    pub eta: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            guidance_scale: 1.0,
            eta: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// `(sigma_down, sigma_up)` for a step from `sigma` to `sigma_next`.
pub fn ancestral_split(sigma: f64, sigma_next: f64, eta: f64) -> (f64, f64) {
    if sigma_next == 0.0 {
        return (0.0, 0.0);
    }
    let up = (eta * (sigma_next * sigma_next * (sigma * sigma - sigma_next * sigma_next) / (sigma * sigma)).sqrt()).min(sigma_next);
    ((sigma_next * sigma_next - up * up).sqrt(), up)
}

fn check_finite(v: &[f64], what: &'static str, step: usize, sigma: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::SamplerNonFinite { what, step, sigma })
    }
}

/// Draws one latent of `len` values from pure noise.
pub fn sample_eulera<T: Real, M: VelocityModel<T> + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    cond: Option<&[T]>,
    len: usize,
    cfg: &SamplerConfig,
) -> Result<Vec<T>> {
    if cfg.steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let timesteps = schedule.sampling_timesteps(cfg.steps);
    let mut sigmas: Vec<f64> = timesteps.iter().map(|&t| schedule.sigma(t)).collect();
    sigmas.push(0.0);
    let zero_cond = match cond {
        Some(c) if cfg.guidance_scale != 1.0 => Some(vec![T::zero(); c.len()]),
        _ => None,
    };

    let mut rng = rng::seeded(cfg.seed);
    let scale0 = (1.0 + sigmas[0] * sigmas[0]).sqrt();
    let mut x: Vec<f64> = standard_normal::<f64>(len, &mut rng).into_iter().map(|z| z * scale0).collect();

    for (step, &t) in timesteps.iter().enumerate() {
        let (sigma, sigma_next) = (sigmas[step], sigmas[step + 1]);
        let (a, b) = normalization(sigma);
        let y: Vec<T> = x.iter().map(|&v| T::lit(v * a)).collect();
        let mut v: Vec<f64> = model.velocity(&y, t, cond)?.iter().map(|v| v.as_f64()).collect();
        if v.len() != len {
            return Err(Error::Shape(format!("model returned {} values for a {len}-value latent", v.len())));
        }
        if let Some(zc) = &zero_cond {
            let vu = model.velocity(&y, t, Some(zc))?;
            let g = cfg.guidance_scale;
            for (vc, u) in v.iter_mut().zip(vu) {
                let u = u.as_f64();
                *vc = u + g * (*vc - u);
            }
        }
        check_finite(&v, "velocity", step, sigma)?;
        let (sigma_down, sigma_up) = ancestral_split(sigma, sigma_next, cfg.eta);
        for (xi, vi) in x.iter_mut().zip(&v) {
            let ex = a * (*xi * a) - b * vi;
            let d = (*xi - ex) / sigma;
            *xi += d * (sigma_down - sigma);
        }
        if sigma_up > 0.0 {
            let noise: Vec<f64> = standard_normal(len, &mut rng);
            for (xi, n) in x.iter_mut().zip(noise) {
                *xi += sigma_up * n;
            }
        }
        check_finite(&x, "state", step, sigma)?;
    }
    Ok(x.into_iter().map(T::lit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;

    impl VelocityModel<f64> for Zero {
        fn velocity(&self, y: &[f64], _t: usize, _c: Option<&[f64]>) -> Result<Vec<f64>> {
            Ok(vec![0.0; y.len()])
        }
    }

    struct Blowup;

    impl VelocityModel<f64> for Blowup {
        fn velocity(&self, y: &[f64], t: usize, _c: Option<&[f64]>) -> Result<Vec<f64>> {
            Ok(vec![if t < 500 { f64::NAN } else { 0.0 }; y.len()])
        }
    }

    #[test]
    fn split_preserves_variance() {
        let (down, up) = ancestral_split(3.0, 1.5, 1.0);
        assert!((down * down + up * up - 2.25).abs() < 1e-12);
        assert_eq!(ancestral_split(3.0, 0.0, 1.0), (0.0, 0.0));
        let (down, up) = ancestral_split(3.0, 1.5, 0.0);
        assert_eq!((down, up), (1.5, 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let s = NoiseSchedule::default();
        let a = sample_eulera(&Zero, &s, None, 32, &SamplerConfig::with_seed(4)).unwrap();
        let b = sample_eulera(&Zero, &s, None, 32, &SamplerConfig::with_seed(4)).unwrap();
        let c = sample_eulera(&Zero, &s, None, 32, &SamplerConfig::with_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn non_finite_velocity_is_reported_with_its_step() {
        let s = NoiseSchedule::default();
        let err = sample_eulera(&Blowup, &s, None, 4, &SamplerConfig::default()).unwrap_err();
        match err {
            Error::SamplerNonFinite { step, .. } => assert_eq!(step, 10),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let cfg = SamplerConfig { steps: 0, ..SamplerConfig::default() };
        assert!(sample_eulera(&Zero, &NoiseSchedule::default(), None, 4, &cfg).is_err());
    }
}

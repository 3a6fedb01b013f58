//! Velocity targets, signal/noise expectations and the training loss.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use svbrdf_core::Real;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Noisy input `y = a x + b n` and velocity target `v = a n - b x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair<T> {
    pub y: Vec<T>,
    pub v_target: Vec<T>,
    pub noise: Vec<T>,
}

pub fn standard_normal<T: Real>(len: usize, rng: &mut impl RngCore) -> Vec<T> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
        .collect()
}

/// Builds the pair from an explicit noise field.
pub fn pair_with_noise<T: Real>(x: &[T], noise: Vec<T>, a: f64, b: f64) -> TrainingPair<T> {
    assert_eq!(x.len(), noise.len(), "signal and noise sizes differ");
    let (a, b) = (T::lit(a), T::lit(b));
    let y = x.iter().zip(&noise).map(|(&x, &n)| a * x + b * n).collect();
    let v_target = x.iter().zip(&noise).map(|(&x, &n)| a * n - b * x).collect();
    TrainingPair { y, v_target, noise }
}

/// Draws `n ~ N(0, I)` and builds the pair at timestep `t`.
pub fn make_training_pair<T: Real>(x: &[T], t: usize, schedule: &NoiseSchedule, rng: &mut impl RngCore) -> TrainingPair<T> {
    assert!((1..=schedule.len()).contains(&t), "timestep {t} outside 1..={}", schedule.len());
    let noise = standard_normal(x.len(), rng);
    pair_with_noise(x, noise, schedule.a(t), schedule.b(t))
}

/// `(E_x, E_n) = (a y - b v, b y + a v)`.
pub fn expectations<T: Real>(y: &[T], v: &[T], a: f64, b: f64) -> (Vec<T>, Vec<T>) {
    assert_eq!(y.len(), v.len(), "input and velocity sizes differ");
    let (a, b) = (T::lit(a), T::lit(b));
    let ex = y.iter().zip(v).map(|(&y, &v)| a * y - b * v).collect();
    let en = y.iter().zip(v).map(|(&y, &v)| b * y + a * v).collect();
    (ex, en)
}

/// Mean squared error between predicted and target velocity.
pub fn velocity_loss<T: Real>(v_pred: &[T], v_target: &[T]) -> Result<T> {
    if v_pred.len() != v_target.len() || v_pred.is_empty() {
        return Err(Error::Shape(format!(
            "loss over {} predicted vs {} target values",
            v_pred.len(),
            v_target.len()
        )));
    }
    let sum: T = v_pred.iter().zip(v_target).map(|(&p, &q)| (p - q) * (p - q)).sum();
    Ok(sum / T::from_usize_lossy(v_pred.len()))
}

/// Gradient of [`velocity_loss`] with respect to `v_pred`, where the mean is
/// taken over `count` elements (the whole batch).
pub fn velocity_loss_grad<T: Real>(v_pred: &[T], v_target: &[T], count: usize) -> Vec<T> {
    let scale = T::lit(2.0) / T::from_usize_lossy(count);
    v_pred.iter().zip(v_target).map(|(&p, &q)| scale * (p - q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn exact_target_recovers_signal_and_noise() {
        let s = NoiseSchedule::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        for t in [1, 17, 500, 1000] {
            let p = make_training_pair(&x, t, &s, &mut rng);
            let (ex, en) = expectations(&p.y, &p.v_target, s.a(t), s.b(t));
            for i in 0..x.len() {
                assert!((ex[i] - x[i]).abs() < 1e-12);
                assert!((en[i] - p.noise[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_velocity_instantiation() {
        let y = [0.5f64, -2.0];
        let (ex, en) = expectations(&y, &[0.0, 0.0], 0.6, 0.8);
        assert_eq!(ex, vec![0.3, -1.2]);
        assert!((en[0] - 0.4).abs() < 1e-15 && (en[1] + 1.6).abs() < 1e-15);
    }

    #[test]
    fn limits_of_the_pair() {
        let s = NoiseSchedule::default();
        let x = vec![0.25f64; 16];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let p = make_training_pair(&x, 1, &s, &mut rng);
        for i in 0..16 {
            assert!((p.y[i] - x[i]).abs() < 0.05);
            assert!((p.v_target[i] - p.noise[i]).abs() < 0.01);
        }
        let p = make_training_pair(&x, 1000, &s, &mut rng);
        for i in 0..16 {
            let a = s.a(1000);
            assert!(a < 0.01);
            assert!((p.y[i] - p.noise[i]).abs() <= a * x[i].abs() + 1e-4 * p.noise[i].abs() + 1e-12);
            assert!((p.v_target[i] + x[i]).abs() <= a * p.noise[i].abs() + 1e-4 + 1e-12);
        }
    }

    #[test]
    fn second_moment_of_noisy_input() {
        let s = NoiseSchedule::default();
        let t = 300;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..160).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: f64 = x.iter().map(|v| v * v).sum();
        let draws = 4000;
        let mean: f64 = (0..draws)
            .map(|_| make_training_pair(&x, t, &s, &mut rng).y.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / draws as f64;
        let expect = s.a(t).powi(2) * x2 + s.b(t).powi(2) * 160.0;
        assert!((mean - expect).abs() / expect < 0.02, "{mean} vs {expect}");
    }

    #[test]
    fn loss_values_and_gradient() {
        let a = [0.1f64, -0.3, 0.7, 1.1];
        assert_eq!(velocity_loss(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        assert!((velocity_loss(&shifted, &a).unwrap() - 0.0625).abs() < 1e-15);
        assert!(velocity_loss(&a[..3], &a).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = velocity_loss_grad(&p, &q, 16);
        for i in 0..16 {
            let e = 1e-6;
            let mut hi = p.clone();
            hi[i] += e;
            let mut lo = p.clone();
            lo[i] -= e;
            let fd = (velocity_loss(&hi, &q).unwrap() - velocity_loss(&lo, &q).unwrap()) / (2.0 * e);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }
}

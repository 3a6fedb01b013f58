use proptest::prelude::*;
use svbrdf_diffusion::objective::pair_with_noise;
use svbrdf_diffusion::sampler::ancestral_split;
use svbrdf_diffusion::{expectations, NoiseSchedule};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn targets_recover_signal_and_noise(
        t in 1usize..=1000,
        x in proptest::collection::vec(-5.0f64..5.0, 1..16),
        seed in any::<u64>(),
    ) {
        let s = NoiseSchedule::default();
        let (a, b) = (s.a(t), s.b(t));
        let n: Vec<f64> = x.iter().enumerate().map(|(i, _)| ((seed ^ i as u64) % 1000) as f64 / 250.0 - 2.0).collect();
        let pair = pair_with_noise(&x, n.clone(), a, b);
        let (ex, en) = expectations(&pair.y, &pair.v_target, a, b);
        for i in 0..x.len() {
            prop_assert!((ex[i] - x[i]).abs() < 1e-9);
            prop_assert!((en[i] - n[i]).abs() < 1e-9);
            prop_assert!((pair.v_target[i] - (a * n[i] - b * x[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn ancestral_split_keeps_target_level(sigma in 0.01f64..200.0, frac in 0.0f64..1.0, eta in 0.0f64..=1.0) {
        let next = sigma * frac;
        let (down, up) = ancestral_split(sigma, next, eta);
        prop_assert!(down >= 0.0 && up >= 0.0 && down <= next + 1e-12);
        if next > 0.0 {
            prop_assert!((down * down + up * up - next * next).abs() < 1e-9 * (1.0 + next * next));
        }
    }
}

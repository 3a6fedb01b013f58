//! Frozen random per-pixel networks.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use svbrdf_core::geometry::normals_to_height;
use svbrdf_core::rng::seeded;
use svbrdf_core::{Image, MaterialMaps};

use crate::Result;

/// Inputs per pixel: summed diffuse and specular albedo (RGB) and height.
pub const FEATURE_INPUTS: usize = 4;
pub const HIDDEN: [usize; 2] = [32, 32];

/// Dense network with Gaussian `N(0, 1/fan_in)` weights and sine
/// activations. The weights are a pure function of the seed and never
/// trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFeatureNet {
    seed: u64,
    widths: Vec<usize>,
    /// Per layer: row-major `out x in` weights followed by `out` biases.
    layers: Vec<Vec<f64>>,
}

impl RandomFeatureNet {
    pub fn new(seed: u64, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| w > 0), "network needs at least one layer");
        let mut rng = seeded(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
                let bias = Normal::new(0.0, 1.0).expect("positive std");
                let mut v: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                v.extend((0..fan_out).map(|_| bias.sample(&mut rng)));
                v
            })
            .collect();
        Self {
            seed,
            widths: widths.to_vec(),
            layers,
        }
    }

    /// Default shape `4 -> 32 -> 32 -> outputs`.
    pub fn standard(seed: u64, outputs: usize) -> Self {
        Self::new(seed, &[FEATURE_INPUTS, HIDDEN[0], HIDDEN[1], outputs])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    /// Raw outputs; hidden layers use `sin`.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.inputs(), "input width");
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, (layer, w)) in self.layers.iter().zip(self.widths.windows(2)).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (weights, bias) = layer.split_at(n_in * n_out);
            let y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = bias[o] + weights[o * n_in..(o + 1) * n_in].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                    if l == last {
                        z
                    } else {
                        z.sin()
                    }
                })
                .collect();
            x = y;
        }
        x
    }
}

/// Per-pixel network inputs of a material: summed albedo RGB plus the
/// integrated height, each standardized over the material to zero mean and
/// unit deviation (a constant feature maps to zero).
pub fn pixel_features(m: &MaterialMaps<f64>) -> Result<Image<f64>> {
    let res = m.resolution();
    let height = normals_to_height(&m.normal, 1.0 / res as f64)?.height;
    let h = height.image();
    let mut raw = Image::from_fn(res, res, FEATURE_INPUTS, |r, c, px| {
        let d = m.diffuse.pixel(r, c);
        let s = m.specular.pixel(r, c);
        for k in 0..3 {
            px[k] = d[k] + s[k];
        }
        px[3] = h.get(r, c, 0);
    });
    let n = (res * res) as f64;
    for k in 0..FEATURE_INPUTS {
        let column = || raw.data().iter().skip(k).step_by(FEATURE_INPUTS);
        let mean = column().sum::<f64>() / n;
        let sd = (column().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 1e-9 { 1.0 / sd } else { 0.0 };
        for v in raw.data_mut().iter_mut().skip(k).step_by(FEATURE_INPUTS) {
            *v = (*v - mean) * scale;
        }
    }
    Ok(raw)
}

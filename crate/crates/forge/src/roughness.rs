//! Procedural roughness from a frozen random network.

use rand::Rng;
use serde::{Deserialize, Serialize};
use svbrdf_core::{Image, MaterialMaps, ROUGHNESS_MIN};

use crate::features::{pixel_features, RandomFeatureNet};
use crate::Result;

pub const BLEND_RANGE: (f64, f64) = (0.25, 0.75);

/// Parameters of one roughness blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughnessBlend {
    pub net_seed: u64,
    /// Weight of the procedural map.
    pub beta: f64,
}

impl RoughnessBlend {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            net_seed: rng.random(),
            beta: rng.random_range(BLEND_RANGE.0..=BLEND_RANGE.1),
        }
    }
}

/// Per-pixel procedural roughness in `(0, 1)`: the logistic of the network
/// output on summed albedo and height.
pub fn procedural_map(m: &MaterialMaps<f64>, net: &RandomFeatureNet) -> Result<Image<f64>> {
    let features = pixel_features(m)?;
    let res = m.resolution();
    Ok(Image::from_fn(res, res, 1, |r, c, px| {
        let z = net.eval(features.pixel(r, c))[0];
        px[0] = 1.0 / (1.0 + (-z).exp());
    }))
}

/// `(1 - beta) * roughness + beta * procedural`, clamped to the valid range.
pub fn blend_roughness(m: &MaterialMaps<f64>, blend: &RoughnessBlend) -> Result<MaterialMaps<f64>> {
    let net = RandomFeatureNet::standard(blend.net_seed, 1);
    let proc_map = procedural_map(m, &net)?;
    let b = blend.beta;
    let mut out = m.clone();
    for (v, p) in out.roughness.data_mut().iter_mut().zip(proc_map.data()) {
        *v = ((1.0 - b) * *v + b * p).clamp(ROUGHNESS_MIN, 1.0);
    }
    Ok(out)
}

/// Blends with a freshly drawn network and weight.
pub fn procedural_roughness(m: &MaterialMaps<f64>, rng: &mut impl Rng) -> Result<(RoughnessBlend, MaterialMaps<f64>)> {
    let blend = RoughnessBlend::random(rng);
    Ok((blend, blend_roughness(m, &blend)?))
}

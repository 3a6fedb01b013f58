//! Image and material error metrics.

use anyhow::{ensure, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use svbrdf_core::rng::stream;
use svbrdf_core::shading::render_point;
use svbrdf_core::{CameraModel, Image, MaterialMaps, PointLight, Vec3};

pub const DEFAULT_LIGHT_COUNT: usize = 128;
/// Light distance from the exemplar centre, in exemplar sizes.
pub const DEFAULT_LIGHT_RADIUS: f64 = 2.41;
const PROXY_LEVELS: usize = 4;
const GRADIENT_WEIGHT: f64 = 0.5;

fn tone(c: f64) -> f64 {
    let c = c.max(0.0);
    c / (1.0 + c)
}

fn luminance(img: &Image<f64>) -> Vec<f64> {
    img.data()
        .chunks_exact(img.channels())
        .map(|p| if p.len() >= 3 { 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2] } else { p[0] })
        .collect()
}

/// Mean norm of the difference of forward-difference luminance gradients.
fn gradient_term(a: &Image<f64>, b: &Image<f64>) -> f64 {
    let (w, h) = (a.width(), a.height());
    let (la, lb) = (luminance(a), luminance(b));
    let d: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x - y).collect();
    let mut sum = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let gx = if c + 1 < w { d[i + 1] - d[i] } else { 0.0 };
            let gy = if r + 1 < h { d[i + w] - d[i] } else { 0.0 };
            sum += gx.hypot(gy);
        }
    }
    sum / (w * h) as f64
}

/// Perceptual stand-in for a learned image metric on linear RGB: over four
/// dyadic scales (fewer if the size stops being even), the mean absolute
/// difference of `c / (1 + c)` tone-mapped values plus half the mean
/// magnitude of the luminance-gradient difference. Symmetric, zero only
/// for equal images, non-decreasing along `lerp(a, b, t)`.
pub fn proxy_perceptual_error(a: &Image<f64>, b: &Image<f64>) -> Result<f64> {
    ensure!(a.same_shape(b), "images differ in shape");
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut total = 0.0;
    for level in 0..PROXY_LEVELS {
        let tone_term = a.data().iter().zip(b.data()).map(|(x, y)| (tone(*x) - tone(*y)).abs()).sum::<f64>()
            / a.data().len() as f64;
        total += tone_term + GRADIENT_WEIGHT * gradient_term(&a, &b);
        let can_halve = a.width() % 2 == 0 && a.height() % 2 == 0 && a.width() >= 2 && a.height() >= 2;
        if level + 1 == PROXY_LEVELS || !can_halve {
            break;
        }
        a = a.downsample2_average()?;
        b = b.downsample2_average()?;
    }
    Ok(total)
}

/// Light `i` of a hemisphere set: uniform in solid angle, drawn from its
/// own stream so any prefix of a larger set is unchanged.
pub fn hemisphere_light(i: usize, radius: f64, seed: u64) -> Result<PointLight<f64>> {
    let mut rng = stream(seed, i as u64);
    // z uniform on (0, 1] is uniform in solid angle; keep the light above the plane
    let z: f64 = 1.0 - rng.random::<f64>();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let pos = Vec3::new(s * phi.cos(), s * phi.sin(), z) * radius;
    Ok(PointLight::white(pos, radius * radius)?)
}

pub fn hemisphere_lights(count: usize, radius: f64, seed: u64) -> Result<Vec<PointLight<f64>>> {
    (0..count).map(|i| hemisphere_light(i, radius, seed)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Diffuse, specular, roughness, normal.
    pub map_rmse: [f64; 4],
    pub mean_proxy: f64,
    pub mean_rmse: f64,
    pub per_light_proxy: Vec<f64>,
    pub per_light_rmse: Vec<f64>,
    pub light_count: usize,
    pub radius: f64,
    pub seed: u64,
}

/// Renders both materials under the same point lights (seen by the
/// default camera) and compares them per light.
pub fn evaluate_relighting(
    m: &MaterialMaps<f64>,
    reference: &MaterialMaps<f64>,
    light_count: usize,
    radius: f64,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_with_lights(m, reference, &hemisphere_lights(light_count, radius, seed)?, radius, seed)
}

pub fn evaluate_with_lights(
    m: &MaterialMaps<f64>,
    reference: &MaterialMaps<f64>,
    lights: &[PointLight<f64>],
    radius: f64,
    seed: u64,
) -> Result<EvalReport> {
    ensure!(m.resolution() == reference.resolution(), "materials differ in resolution");
    ensure!(!lights.is_empty(), "need at least one light");
    let cam = CameraModel::default();
    let mut per_light_proxy = Vec::with_capacity(lights.len());
    let mut per_light_rmse = Vec::with_capacity(lights.len());
    for light in lights {
        let a = render_point(m, light, &cam)?;
        let b = render_point(reference, light, &cam)?;
        per_light_proxy.push(proxy_perceptual_error(&a, &b)?);
        per_light_rmse.push(a.rmse(&b)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalReport {
        map_rmse: m.map_rmse(reference)?,
        mean_proxy: mean(&per_light_proxy),
        mean_rmse: mean(&per_light_rmse),
        per_light_proxy,
        per_light_rmse,
        light_count: lights.len(),
        radius,
        seed,
    })
}

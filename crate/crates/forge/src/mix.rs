//! Piece-wise constant mixtures with one-hot selection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use svbrdf_core::{sanitize_normal, Image, MaterialMaps, Vec3};

use crate::features::{pixel_features, RandomFeatureNet};
use crate::{Error, Result};

/// Mixture parameters: which exemplars, which window of each and the
/// selection network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecipe {
    pub sources: Vec<String>,
    pub crops: Vec<crate::CropSpec>,
    pub net_seed: u64,
}

/// Bilinear 2x upsampling of every map (normals renormalized).
pub fn upsample2(m: &MaterialMaps<f64>) -> Result<MaterialMaps<f64>> {
    let r = 2 * m.resolution();
    let mut normal = m.normal.resize_bilinear(r, r);
    renormalize(&mut normal);
    Ok(MaterialMaps::new(
        m.diffuse.resize_bilinear(r, r),
        m.specular.resize_bilinear(r, r),
        m.roughness.resize_bilinear(r, r),
        normal,
    )?)
}

/// 2x2 box downsampling of every map (normals renormalized).
pub fn downsample2(m: &MaterialMaps<f64>) -> Result<MaterialMaps<f64>> {
    let mut normal = m.normal.downsample2_average()?;
    renormalize(&mut normal);
    Ok(MaterialMaps::new(
        m.diffuse.downsample2_average()?,
        m.specular.downsample2_average()?,
        m.roughness.downsample2_average()?,
        normal,
    )?)
}

fn renormalize(normal: &mut Image<f64>) {
    for px in normal.data_mut().chunks_exact_mut(3) {
        px.copy_from_slice(&sanitize_normal(Vec3::from_slice(px)).to_array());
    }
}

/// Index of the selected source per pixel. The same network scores every
/// source from its own features; the highest logit wins, ties going to the
/// lowest index.
pub fn selection(sources: &[MaterialMaps<f64>], net: &RandomFeatureNet) -> Result<Vec<usize>> {
    let features = sources.iter().map(pixel_features).collect::<Result<Vec<_>>>()?;
    let res = sources[0].resolution();
    Ok((0..res * res)
        .map(|p| {
            let (r, c) = (p / res, p % res);
            let mut best = (0, f64::NEG_INFINITY);
            for (i, f) in features.iter().enumerate() {
                let z = net.eval(f.pixel(r, c))[0];
                if z > best.1 {
                    best = (i, z);
                }
            }
            best.0
        })
        .collect())
}

/// One-hot weights `[pixel][source]` for a selection.
pub fn one_hot(selection: &[usize], sources: usize) -> Vec<Vec<f64>> {
    selection
        .iter()
        .map(|&s| (0..sources).map(|i| if i == s { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Mixes sources of equal resolution: upsample 2x, copy every channel from
/// the selected source, then average back down.
pub fn mix_with(sources: &[MaterialMaps<f64>], net_seed: u64) -> Result<(MaterialMaps<f64>, Vec<usize>)> {
    if !(2..=3).contains(&sources.len()) {
        return Err(Error::Config(format!("mixing needs 2 or 3 sources, got {}", sources.len())));
    }
    let res = sources[0].resolution();
    if sources.iter().any(|s| s.resolution() != res) {
        return Err(Error::Config("mixture sources differ in resolution".into()));
    }
    let up = sources.iter().map(upsample2).collect::<Result<Vec<_>>>()?;
    let net = RandomFeatureNet::standard(net_seed, 1);
    let sel = selection(&up, &net)?;
    let pick = |get: fn(&MaterialMaps<f64>) -> &Image<f64>| {
        let ch = get(&up[0]).channels();
        Image::from_fn(2 * res, 2 * res, ch, |r, c, px| {
            px.copy_from_slice(get(&up[sel[r * 2 * res + c]]).pixel(r, c));
        })
    };
    let mixed = MaterialMaps::new(
        pick(|m| &m.diffuse),
        pick(|m| &m.specular),
        pick(|m| &m.roughness),
        pick(|m| &m.normal),
    )?;
    Ok((downsample2(&mixed)?, sel))
}

/// Mixes with a freshly drawn selection network.
pub fn mix_materials(sources: &[MaterialMaps<f64>], rng: &mut impl Rng) -> Result<MaterialMaps<f64>> {
    Ok(mix_with(sources, rng.random())?.0)
}

//! Specular albedo for sources that ship without one.

use rand::Rng;
use svbrdf_core::{Image, MaterialMaps};

use crate::{Error, Result};

pub const SPECULAR_RANGE: (f64, f64) = (0.04, 0.08);

/// Maps of a metal/rough style source: base colour, optional metalness,
/// roughness and normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMaps {
    pub albedo: Image<f64>,
    pub metalness: Option<Image<f64>>,
    pub roughness: Image<f64>,
    pub normal: Image<f64>,
}

/// `specular = u + albedo * metalness` with `u ~ U[0.04, 0.08]` shared by
/// all pixels, `diffuse = albedo * (1 - metalness)`, both clamped to
/// `[0, 1]`. A missing metalness map counts as zero.
pub fn assign_specular(src: &SourceMaps, rng: &mut impl Rng) -> Result<MaterialMaps<f64>> {
    let u = rng.random_range(SPECULAR_RANGE.0..=SPECULAR_RANGE.1);
    assign_specular_with(src, u)
}

pub fn assign_specular_with(src: &SourceMaps, u: f64) -> Result<MaterialMaps<f64>> {
    let (w, h) = (src.albedo.width(), src.albedo.height());
    if src.albedo.channels() != 3 {
        return Err(Error::Config("albedo needs 3 channels".into()));
    }
    if let Some(m) = &src.metalness {
        if m.width() != w || m.height() != h || m.channels() != 1 {
            return Err(Error::Config("metalness must be a single-channel map matching the albedo".into()));
        }
    }
    let metal = |r: usize, c: usize| src.metalness.as_ref().map_or(0.0, |m| m.get(r, c, 0).clamp(0.0, 1.0));
    let diffuse = Image::from_fn(w, h, 3, |r, c, px| {
        let k = 1.0 - metal(r, c);
        for (ch, v) in px.iter_mut().enumerate() {
            *v = (src.albedo.get(r, c, ch) * k).clamp(0.0, 1.0);
        }
    });
    let specular = Image::from_fn(w, h, 3, |r, c, px| {
        let k = metal(r, c);
        for (ch, v) in px.iter_mut().enumerate() {
            *v = (u + src.albedo.get(r, c, ch) * k).clamp(0.0, 1.0);
        }
    });
    Ok(MaterialMaps::new(diffuse, specular, src.roughness.clone(), src.normal.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use svbrdf_core::rng::seeded;

    fn source(metalness: Option<f64>) -> SourceMaps {
        SourceMaps {
            albedo: Image::from_fn(4, 4, 3, |r, c, px| px.fill(0.1 + 0.05 * (r + c) as f64)),
            metalness: metalness.map(|m| Image::filled(4, 4, 1, m)),
            roughness: Image::filled(4, 4, 1, 0.5),
            normal: Image::from_fn(4, 4, 3, |_, _, px| px.copy_from_slice(&[0.0, 0.0, 1.0])),
        }
    }

    #[test]
    fn homogeneous_value_in_range() {
        for seed in 0..50 {
            let m = assign_specular(&source(None), &mut seeded(seed)).unwrap();
            let u = m.specular.get(0, 0, 0);
            assert!((0.04..=0.08).contains(&u));
            assert!(m.specular.data().iter().all(|&v| v == u));
            assert_eq!(m.diffuse, source(None).albedo);
        }
    }

    #[test]
    fn metalness_endpoints() {
        let full = assign_specular_with(&source(Some(1.0)), 0.05).unwrap();
        assert!(full.diffuse.data().iter().all(|&v| v == 0.0));
        for (s, a) in full.specular.data().iter().zip(source(None).albedo.data()) {
            assert_eq!(*s, 0.05 + a);
        }
        assert_eq!(
            assign_specular_with(&source(Some(0.0)), 0.06).unwrap(),
            assign_specular_with(&source(None), 0.06).unwrap()
        );
    }
}

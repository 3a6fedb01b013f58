//! Rotated square crops.

use rand::Rng;
use serde::{Deserialize, Serialize};
use svbrdf_core::{sanitize_normal, Image, MaterialMaps, Vec3};

use crate::{Error, Result};

const MAX_ANGLE_TRIES: usize = 64;

/// A square window of `size` source pixels centred at (`row`, `col`)
/// (continuous coordinates, pixel centres at `i + 0.5`), rotated
/// counter-clockwise on screen by `angle` radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub row: f64,
    pub col: f64,
    pub size: f64,
    pub angle: f64,
}

impl CropSpec {
    /// Axis-aligned crop with top-left corner at (`row0`, `col0`).
    pub fn axis_aligned(row0: usize, col0: usize, size: usize) -> Self {
        let half = size as f64 / 2.0;
        Self {
            row: row0 as f64 + half,
            col: col0 as f64 + half,
            size: size as f64,
            angle: 0.0,
        }
    }

    /// Half the side of the axis-aligned box bounding the rotated window.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.size * (self.angle.cos().abs() + self.angle.sin().abs())
    }

    /// Whether the rotated window lies inside a `resolution` square.
    pub fn contained_in(&self, resolution: usize) -> bool {
        let e = self.half_extent() - 1e-9;
        let r = resolution as f64;
        self.row - e >= 0.0 && self.row + e <= r && self.col - e >= 0.0 && self.col + e <= r
    }

    /// Uniform angle, size in `[min_px, max_px]` and a position keeping the
    /// window inside the source. Angles whose bounding box cannot hold a
    /// `min_px` window are redrawn.
    pub fn random(resolution: usize, min_px: usize, max_px: usize, rng: &mut impl Rng) -> Result<Self> {
        if min_px == 0 || min_px > max_px {
            return Err(Error::Config(format!("crop size range [{min_px}, {max_px}] is empty")));
        }
        if min_px > resolution {
            return Err(Error::SourceTooSmall { resolution, size: min_px });
        }
        let r = resolution as f64;
        for _ in 0..MAX_ANGLE_TRIES {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let spread = angle.cos().abs() + angle.sin().abs();
            let largest = (r / spread).min(max_px as f64);
            if largest < min_px as f64 {
                continue;
            }
            let size = rng.random_range(min_px as f64..=largest);
            let half = 0.5 * size * spread;
            let row = rng.random_range(half..=r - half);
            let col = rng.random_range(half..=r - half);
            return Ok(Self { row, col, size, angle });
        }
        Err(Error::SourceTooSmall { resolution, size: min_px })
    }
}

/// Resamples the window to `out_res` pixels with bilinear filtering. Normals
/// are rotated with the texture and renormalized.
pub fn apply_crop(src: &MaterialMaps<f64>, spec: &CropSpec, out_res: usize) -> Result<MaterialMaps<f64>> {
    if !spec.contained_in(src.resolution()) {
        return Err(Error::Config(format!("{spec:?} is not inside a {}px source", src.resolution())));
    }
    if out_res == 0 {
        return Err(Error::Config("crop output resolution must be positive".into()));
    }
    let scale = spec.size / out_res as f64;
    let (s, c) = spec.angle.sin_cos();
    let half = out_res as f64 / 2.0;
    // output pixel -> source sample position (pixel centres at integers)
    let position = |r: usize, col: usize| {
        let u = (col as f64 + 0.5 - half) * scale;
        let v = (half - r as f64 - 0.5) * scale;
        // rotate by -angle in a y-up frame
        let (dx, dy) = (c * u + s * v, -s * u + c * v);
        (spec.row - dy - 0.5, spec.col + dx - 0.5)
    };
    let resample = |img: &Image<f64>| {
        let mut buf = vec![0.0; img.channels()];
        Image::from_fn(out_res, out_res, img.channels(), |r, col, px| {
            let (sr, sc) = position(r, col);
            img.sample_bilinear(sr, sc, &mut buf);
            px.copy_from_slice(&buf);
        })
    };
    let mut normal = resample(&src.normal);
    for px in normal.data_mut().chunks_exact_mut(3) {
        let n = sanitize_normal(Vec3::from_slice(px).rotate_z(spec.angle));
        px.copy_from_slice(&n.to_array());
    }
    Ok(MaterialMaps::new(
        resample(&src.diffuse),
        resample(&src.specular),
        resample(&src.roughness),
        normal,
    )?)
}

/// `count` random crops of `src`, each resized to `out_res`.
pub fn random_crops(
    src: &MaterialMaps<f64>,
    count: usize,
    min_px: usize,
    max_px: usize,
    out_res: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(CropSpec, MaterialMaps<f64>)>> {
    if count == 0 {
        return Err(Error::Config("crop count must be at least 1".into()));
    }
    (0..count)
        .map(|_| {
            let spec = CropSpec::random(src.resolution(), min_px, max_px, rng)?;
            Ok((spec, apply_crop(src, &spec, out_res)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use svbrdf_core::rng::seeded;

    fn textured(res: usize) -> MaterialMaps<f64> {
        let d = Image::from_fn(res, res, 3, |r, c, px| {
            for (k, v) in px.iter_mut().enumerate() {
                *v = ((r * 7 + c * 3 + k * 5) % 11) as f64 / 11.0;
            }
        });
        let n = Image::from_fn(res, res, 3, |r, c, px| {
            let v = Vec3::new(0.2 * (c as f64 * 0.7).sin(), 0.3 * (r as f64 * 0.4).cos(), 1.0).normalize();
            px.copy_from_slice(&v.to_array());
        });
        MaterialMaps::new(d.clone(), d.map(|v| 0.1 * v), Image::filled(res, res, 1, 0.5), n).unwrap()
    }

    #[test]
    fn identity_crop_is_exact_sub_image() {
        let m = textured(12);
        let out = apply_crop(&m, &CropSpec::axis_aligned(2, 3, 8), 8).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(out.diffuse.pixel(r, c), m.diffuse.pixel(r + 2, c + 3));
                assert_eq!(out.roughness.pixel(r, c), m.roughness.pixel(r + 2, c + 3));
            }
        }
        assert!(out.normal.rmse(&apply_crop(&m, &CropSpec::axis_aligned(2, 3, 8), 8).unwrap().normal).unwrap() == 0.0);
    }

    #[test]
    fn quarter_turn_matches_pixel_rotation() {
        let m = textured(10);
        let spec = CropSpec {
            angle: std::f64::consts::FRAC_PI_2,
            ..CropSpec::axis_aligned(0, 0, 10)
        };
        let out = apply_crop(&m, &spec, 10).unwrap();
        let rot = m.rotate90_ccw();
        assert!(out.diffuse.rmse(&rot.diffuse).unwrap() < 1e-12);
        assert!(out.normal.rmse(&rot.normal).unwrap() < 1e-12);
    }

    #[test]
    fn random_crops_are_contained() {
        let m = textured(40);
        let mut rng = seeded(1);
        for (spec, crop) in random_crops(&m, 50, 10, 30, 8, &mut rng).unwrap() {
            assert!(spec.contained_in(40));
            assert!((10.0..=30.0).contains(&spec.size));
            assert!(crop.is_valid());
        }
        assert!(matches!(CropSpec::random(8, 9, 12, &mut rng), Err(Error::SourceTooSmall { .. })));
    }

    #[test]
    fn constant_material_stays_constant() {
        let m = MaterialMaps::constant(16, Vec3::splat(0.4), Vec3::splat(0.05), 0.3, Vec3::new(0.0, 0.0, 1.0));
        for (_, c) in random_crops(&m, 8, 4, 16, 6, &mut seeded(2)).unwrap() {
            assert!(c.diffuse.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
            for px in c.normal.data().chunks_exact(3) {
                assert!(px[0].abs() < 1e-15 && px[1].abs() < 1e-15 && (px[2] - 1.0).abs() < 1e-15);
            }
        }
    }
}

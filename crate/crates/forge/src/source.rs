//! Source materials: procedural generators and on-disk collections.

use std::path::Path;

use rand::Rng;
use svbrdf_core::geometry::{height_to_normals, HeightField};
use svbrdf_core::io::{find_material_dirs, load_material};
use svbrdf_core::rng::{mix_seed, seeded};
use svbrdf_core::{Image, MaterialMaps, ROUGHNESS_MIN};

use crate::specular::{assign_specular, SourceMaps};
use crate::Result;

/// Named source materials.
#[derive(Debug, Clone, Default)]
pub struct SourceSet {
    pub ids: Vec<String>,
    pub materials: Vec<MaterialMaps<f64>>,
}

impl SourceSet {
    /// `count` procedural materials at `resolution`.
    pub fn procedural(count: usize, resolution: usize, seed: u64) -> Result<Self> {
        let mut set = Self::default();
        for i in 0..count {
            set.ids.push(format!("proc-{i:05}"));
            set.materials.push(procedural_source(resolution, &mut seeded(mix_seed(&[seed, i as u64])))?);
        }
        Ok(set)
    }

    /// Every material directory under `root`, in sorted path order.
    pub fn from_dir(root: &Path) -> Result<Self> {
        let mut set = Self::default();
        for dir in find_material_dirs(root)? {
            let id = dir.strip_prefix(root).unwrap_or(&dir).to_string_lossy().replace('\\', "/");
            set.ids.push(if id.is_empty() { ".".into() } else { id });
            set.materials.push(load_material(&dir)?);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MaterialMaps<f64>> {
        self.ids.iter().position(|i| i == id).map(|i| &self.materials[i])
    }

    pub fn min_resolution(&self) -> Option<usize> {
        self.materials.iter().map(MaterialMaps::resolution).min()
    }
}

/// Tileable value noise summed over `octaves` (each at twice the frequency
/// and half the amplitude), normalized to `[0, 1]`.
fn fbm(res: usize, base_cells: usize, octaves: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; res * res];
    let mut amp = 1.0;
    let mut cells = base_cells.max(1);
    for _ in 0..octaves {
        let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.random()).collect();
        for r in 0..res {
            for c in 0..res {
                let y = r as f64 * cells as f64 / res as f64;
                let x = c as f64 * cells as f64 / res as f64;
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
                let (fy, fx) = (smooth(y - y0 as f64), smooth(x - x0 as f64));
                let at = |i: usize, j: usize| lattice[(i % cells) * cells + j % cells];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                out[r * res + c] += amp * (top * (1.0 - fy) + bottom * fy);
            }
        }
        amp *= 0.5;
        cells *= 2;
    }
    let (lo, hi) = out.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    out.iter().map(|v| (v - lo) / span).collect()
}

/// Rows of bricks: 1 inside a brick, 0 in the mortar.
fn bricks(res: usize, rows: usize, mortar: f64) -> Vec<f64> {
    let h = res as f64 / rows as f64;
    let w = 2.0 * h;
    (0..res * res)
        .map(|p| {
            let (r, c) = ((p / res) as f64 + 0.5, (p % res) as f64 + 0.5);
            let row = (r / h).floor();
            let shift = if row as usize % 2 == 1 { w / 2.0 } else { 0.0 };
            let u = ((c + shift) % w) / w;
            let v = (r % h) / h;
            let m = mortar / 2.0;
            if u < m / 2.0 || u > 1.0 - m / 2.0 || v < m || v > 1.0 - m {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    let base = rng.random_range(0.05..0.85);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.3));
    tint.map(|t| (base * t).clamp(0.0, 1.0))
}

/// A random tileable material: noise, brick, or spotted pattern with
/// matching albedo, height, roughness and (sometimes) metalness.
pub fn procedural_source(res: usize, rng: &mut impl Rng) -> Result<MaterialMaps<f64>> {
    let kind = rng.random_range(0..3u8);
    let (c0, c1) = (random_color(rng), random_color(rng));
    let cells = rng.random_range(2..6);
    let noise = fbm(res, cells, 4, rng);
    let detail = fbm(res, 2 * cells, 3, rng);
    let (mask, height): (Vec<f64>, Vec<f64>) = match kind {
        0 => (noise.clone(), noise.iter().zip(&detail).map(|(a, b)| 0.7 * a + 0.3 * b).collect()),
        1 => {
            let b = bricks(res, rng.random_range(3..7), rng.random_range(0.08..0.2));
            let h = b.iter().zip(&detail).map(|(b, d)| 0.8 * b + 0.2 * d).collect();
            (b.iter().zip(&noise).map(|(b, n)| b * (0.6 + 0.4 * n)).collect(), h)
        }
        _ => {
            let thr = rng.random_range(0.45..0.7);
            let spots: Vec<f64> = noise.iter().map(|&n| if n > thr { 1.0 } else { 0.0 }).collect();
            let h = spots.iter().zip(&detail).map(|(s, d)| 0.6 * s + 0.4 * d).collect();
            (spots, h)
        }
    };
    let albedo = Image::from_fn(res, res, 3, |r, c, px| {
        let t = mask[r * res + c];
        let d = 0.85 + 0.3 * detail[r * res + c];
        for k in 0..3 {
            px[k] = ((c0[k] * (1.0 - t) + c1[k] * t) * d).clamp(0.0, 1.0);
        }
    });
    let (r_lo, r_hi) = (rng.random_range(0.05..0.5), rng.random_range(0.3..1.0));
    let roughness = Image::from_fn(res, res, 1, |r, c, px| {
        let t = 0.7 * mask[r * res + c] + 0.3 * detail[r * res + c];
        px[0] = (r_lo * (1.0 - t) + r_hi * t).clamp(ROUGHNESS_MIN, 1.0);
    });
    let metalness = rng.random_bool(0.25).then(|| {
        Image::from_fn(res, res, 1, |r, c, px| px[0] = if mask[r * res + c] > 0.5 { 1.0 } else { 0.0 })
    });
    let depth = rng.random_range(0.005..0.03);
    let hf = HeightField::from_fn(res, res, |r, c| depth * height[r * res + c])?;
    let normal = height_to_normals(&hf, 1.0 / res as f64);
    assign_specular(
        &SourceMaps {
            albedo,
            metalness,
            roughness,
            normal,
        },
        rng,
    )
}

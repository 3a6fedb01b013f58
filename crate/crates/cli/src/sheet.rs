//! Contact sheets for manual selection.

use anyhow::{ensure, Result};
use svbrdf_core::io::linear_to_srgb;
use svbrdf_core::shading::render_point;
use svbrdf_core::{CameraModel, Image, MaterialMaps, PointLight};

use crate::replicates::ReplicateSet;

pub const MAP_TILES: usize = 4;

/// 3x5 digit glyphs, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Display-space tiles of a material: diffuse, specular, roughness and
/// normal (`(n + 1) / 2`).
fn map_tiles(m: &MaterialMaps<f64>) -> [Image<f64>; MAP_TILES] {
    let srgb = |img: &Image<f64>| img.map(|v| linear_to_srgb(v.clamp(0.0, 1.0)));
    let rough = Image::from_fn(m.resolution(), m.resolution(), 3, |r, c, px| px.fill(m.roughness.get(r, c, 0)));
    [srgb(&m.diffuse), srgb(&m.specular), rough, m.normal.map(|v| 0.5 * (v + 1.0))]
}

fn blit(sheet: &mut Image<f64>, tile: &Image<f64>, row0: usize, col0: usize, size: usize) {
    let t = tile.resize_bilinear(size, size);
    for r in 0..size {
        for c in 0..size {
            sheet.pixel_mut(row0 + r, col0 + c).copy_from_slice(t.pixel(r, c));
        }
    }
}

/// Draws `label` in white on black at the top-left of the given tile.
fn stamp(sheet: &mut Image<f64>, label: &str, row0: usize, col0: usize, size: usize) {
    let glyphs: Vec<usize> = label.bytes().filter(u8::is_ascii_digit).map(|b| (b - b'0') as usize).collect();
    let width = (4 * glyphs.len() + 1).min(size);
    for r in 0..7.min(size) {
        for c in 0..width {
            sheet.pixel_mut(row0 + r, col0 + c).fill(0.0);
        }
    }
    for (g, &d) in glyphs.iter().enumerate() {
        for (y, bits) in DIGITS[d].iter().enumerate() {
            for x in 0..3 {
                let (r, c) = (1 + y, 1 + 4 * g + x);
                if bits >> (2 - x) & 1 == 1 && r < size && c < size {
                    sheet.pixel_mut(row0 + r, col0 + c).fill(1.0);
                }
            }
        }
    }
}

/// One row per replicate: its four maps followed by renders under each
/// preview light, every tile `tile` pixels square and the seed stamped in
/// the first tile. Values are sRGB-encoded in `[0, 1]`.
pub fn contact_sheet(rs: &ReplicateSet, preview_lights: &[PointLight<f64>], tile: usize) -> Result<Image<f64>> {
    ensure!(!rs.entries.is_empty(), "nothing to show");
    ensure!(tile > 0, "tile size must be positive");
    let cols = MAP_TILES + preview_lights.len();
    let mut sheet = Image::new(cols * tile, rs.entries.len() * tile, 3);
    let cam = CameraModel::default();
    for (row, e) in rs.entries.iter().enumerate() {
        let mut col = 0;
        for t in map_tiles(&e.material) {
            blit(&mut sheet, &t, row * tile, col * tile, tile);
            col += 1;
        }
        for light in preview_lights {
            let img = render_point(&e.material, light, &cam)?.map(|v| linear_to_srgb(v.clamp(0.0, 1.0)));
            blit(&mut sheet, &img, row * tile, col * tile, tile);
            col += 1;
        }
        stamp(&mut sheet, &e.seed.to_string(), row * tile, 0, tile);
    }
    Ok(sheet)
}

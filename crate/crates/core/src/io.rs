//! Material directories and HDR image files.
//!
//! A material directory holds four 16-bit linear PNG files plus a
//! `material.json` sidecar:
//!
//! ```text
//! diffuse.png    RGB16, value / 65535
//! specular.png   RGB16, value / 65535
//! roughness.png  L16,   value / 65535
//! normal.png     RGB16, 0.5 * n + 0.5 = value / 65534 (code 32767 is exactly 0)
//! material.json  {"format_version": 1, "resolution": R, "channel_order": [...], ...}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::material::CHANNEL_ORDER;
use crate::{Error, Image, MaterialMaps, Real, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const SIDECAR: &str = "material.json";
const ALBEDO_SCALE: f64 = 65535.0;
const NORMAL_SCALE: f64 = 65534.0;

const MAPS: [(&str, &str); 4] = [
    ("diffuse", "diffuse.png"),
    ("specular", "specular.png"),
    ("roughness", "roughness.png"),
    ("normal", "normal.png"),
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sidecar {
    pub format_version: u32,
    pub resolution: usize,
    pub channel_order: Vec<String>,
    pub albedo_scale: f64,
    pub normal_scale: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn quantize<T: Real>(v: T, scale: f64) -> u16 {
    (v.as_f64().clamp(0.0, 1.0) * scale).round() as u16
}

fn write_png16<T: Real>(img: &Image<T>, path: &Path, encode: impl Fn(T) -> u16) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let data: Vec<u16> = img.data().iter().map(|&v| encode(v)).collect();
    match img.channels() {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, data)
            .expect("buffer sized from image")
            .save(path)
            .map_err(img_err(path)),
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, data)
            .expect("buffer sized from image")
            .save(path)
            .map_err(img_err(path)),
        c => Err(Error::InvalidArgument(format!("cannot store {c}-channel map"))),
    }
}

fn read_png16<T: Real>(path: &Path, channels: usize, decode: impl Fn(u16) -> T) -> Result<Image<T>> {
    let dynimg = image::open(path).map_err(img_err(path))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let raw: Vec<u16> = match channels {
        1 => dynimg.into_luma16().into_raw(),
        _ => dynimg.into_rgb16().into_raw(),
    };
    Image::from_vec(w, h, channels, raw.into_iter().map(decode).collect())
}

/// Writes `m` into `dir` (created if needed).
pub fn save_material<T: Real>(m: &MaterialMaps<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_png16(&m.diffuse, &dir.join(MAPS[0].1), |v| quantize(v, ALBEDO_SCALE))?;
    write_png16(&m.specular, &dir.join(MAPS[1].1), |v| quantize(v, ALBEDO_SCALE))?;
    write_png16(&m.roughness, &dir.join(MAPS[2].1), |v| quantize(v, ALBEDO_SCALE))?;
    let half = T::lit(0.5);
    write_png16(&m.normal, &dir.join(MAPS[3].1), |v| quantize(v * half + half, NORMAL_SCALE))?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        resolution: m.resolution(),
        channel_order: CHANNEL_ORDER.iter().map(|s| s.to_string()).collect(),
        albedo_scale: ALBEDO_SCALE,
        normal_scale: NORMAL_SCALE,
    };
    let path = dir.join(SIDECAR);
    fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(io_err(&path))
}

/// Reads a material directory written by [`save_material`].
pub fn load_material<T: Real>(dir: &Path) -> Result<MaterialMaps<T>> {
    for (name, file) in MAPS {
        if !dir.join(file).is_file() {
            return Err(Error::MissingMap {
                map: name,
                dir: dir.to_path_buf(),
            });
        }
    }
    let sidecar_path = dir.join(SIDECAR);
    let sidecar: Option<Sidecar> = match fs::read(&sidecar_path) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(&sidecar_path)(e)),
    };
    if let Some(s) = &sidecar {
        if s.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                dir: dir.to_path_buf(),
                reason: format!("unsupported format version {}", s.format_version),
            });
        }
        if s.channel_order.iter().map(String::as_str).ne(CHANNEL_ORDER) {
            return Err(Error::Format {
                dir: dir.to_path_buf(),
                reason: "unexpected channel order".into(),
            });
        }
    }
    let albedo = |q: u16| T::lit(q as f64 / ALBEDO_SCALE);
    let diffuse = read_png16(&dir.join(MAPS[0].1), 3, albedo)?;
    let specular = read_png16(&dir.join(MAPS[1].1), 3, albedo)?;
    let roughness = read_png16(&dir.join(MAPS[2].1), 1, albedo)?;
    let normal = read_png16(&dir.join(MAPS[3].1), 3, |q| T::lit(2.0 * q as f64 / NORMAL_SCALE - 1.0))?;
    let m = MaterialMaps::new(diffuse, specular, roughness, normal).map_err(|e| Error::Format {
        dir: dir.to_path_buf(),
        reason: format!("resolution mismatch between maps ({e})"),
    })?;
    if let Some(s) = sidecar {
        if s.resolution != m.resolution() {
            return Err(Error::Format {
                dir: dir.to_path_buf(),
                reason: format!("sidecar says {} px, maps are {} px", s.resolution, m.resolution()),
            });
        }
    }
    Ok(m)
}

/// Lists material directories (those holding a sidecar) below `root`, sorted.
pub fn find_material_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(SIDECAR).is_file() {
            out.push(dir);
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if entry.path().is_dir() {
                stack.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Reads an 8/16-bit or float image as linear values in `[0, 1]` (for
/// integer formats) with the requested channel count (1 or 3).
pub fn read_linear_image<T: Real>(path: &Path, channels: usize) -> Result<Image<T>> {
    let dynimg = image::open(path).map_err(img_err(path))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<T> = match channels {
        1 => dynimg.into_luma16().into_raw().into_iter().map(|v| T::lit(v as f64 / 65535.0)).collect(),
        3 => dynimg.into_rgb32f().into_raw().into_iter().map(|v| T::lit(v as f64)).collect(),
        c => return Err(Error::InvalidArgument(format!("unsupported channel count {c}"))),
    };
    Image::from_vec(w, h, channels, data)
}

/// Writes a 3-channel linear float image (`.exr` or `.hdr`).
pub fn write_hdr<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument("HDR export needs 3 channels".into()));
    }
    let data: Vec<f32> = img.data().iter().map(|v| v.as_f64() as f32).collect();
    let buf = ImageBuffer::<Rgb<f32>, _>::from_raw(img.width() as u32, img.height() as u32, data)
        .expect("buffer sized from image");
    image::DynamicImage::ImageRgb32F(buf).save(path).map_err(img_err(path))
}

/// Reads a 3-channel HDR image (`.hdr`, `.exr`, or any format `image` reads).
pub fn read_hdr<T: Real>(path: &Path) -> Result<Image<T>> {
    read_linear_image(path, 3)
}

/// sRGB transfer function for display exports.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Writes an 8-bit sRGB PNG after multiplying by `exposure`.
pub fn write_preview_png<T: Real>(img: &Image<T>, exposure: f64, path: &Path) -> Result<()> {
    write_png_with(img, path, |v| linear_to_srgb(v * exposure))
}

/// Writes an image whose values are already display-encoded in `[0, 1]`.
pub fn write_display_png<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    write_png_with(img, path, |v| v.clamp(0.0, 1.0))
}

fn write_png_with<T: Real>(img: &Image<T>, path: &Path, display: impl Fn(f64) -> f64) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let encode = |v: T| (display(v.as_f64()) * 255.0).round() as u8;
    let res = match img.channels() {
        1 => ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, img.data().iter().map(|&v| encode(v)).collect())
            .expect("buffer sized from image")
            .save(path),
        3 => ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(w, h, img.data().iter().map(|&v| encode(v)).collect())
            .expect("buffer sized from image")
            .save(path),
        c => return Err(Error::InvalidArgument(format!("cannot preview {c}-channel image"))),
    };
    res.map_err(img_err(path))
}

//! The SVBRDF data model and its codec to the 10-channel network image.

use crate::{Error, Image, Real, Result, Vec3};

/// Lower bound on GGX roughness.
pub const ROUGHNESS_MIN: f64 = 0.01;
/// Normals are never allowed to tilt past this `z`.
pub const NORMAL_Z_FLOOR: f64 = 0.05;
/// Channel count of the latent image.
pub const LATENT_CHANNELS: usize = 10;
/// Latent channel order, part of both the in-memory and on-disk contract.
pub const CHANNEL_ORDER: [&str; LATENT_CHANNELS] = [
    "diffuse.r",
    "diffuse.g",
    "diffuse.b",
    "specular.r",
    "specular.g",
    "specular.b",
    "roughness",
    "normal.x",
    "normal.y",
    "normal.z",
];

pub const DIFFUSE_OFFSET: usize = 0;
pub const SPECULAR_OFFSET: usize = 3;
pub const ROUGHNESS_OFFSET: usize = 6;
pub const NORMAL_OFFSET: usize = 7;

const UNIT_TOLERANCE: f64 = 1e-4;

/// Per-pixel reflectance parameters of a square exemplar.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMaps<T> {
    pub diffuse: Image<T>,
    pub specular: Image<T>,
    pub roughness: Image<T>,
    pub normal: Image<T>,
}

/// Reason a material fails its invariants.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotSquare,
    ResolutionMismatch,
    ChannelCount(&'static str),
    NonFinite(&'static str),
    OutOfRange { map: &'static str, value: f64 },
    NormalNotUnit { pixel: usize, length: f64 },
    NormalBelowHorizon { pixel: usize, z: f64 },
}

impl<T: Real> MaterialMaps<T> {
    /// Assembles a material and checks the structural invariants (shared
    /// square resolution and channel counts). Value ranges are checked by
    /// [`MaterialMaps::validate`].
    pub fn new(diffuse: Image<T>, specular: Image<T>, roughness: Image<T>, normal: Image<T>) -> Result<Self> {
        let m = Self {
            diffuse,
            specular,
            roughness,
            normal,
        };
        m.check_structure().map_err(|v| Error::Shape(format!("{v:?}")))?;
        Ok(m)
    }

    /// Spatially constant material.
    pub fn constant(resolution: usize, diffuse: Vec3<T>, specular: Vec3<T>, roughness: T, normal: Vec3<T>) -> Self {
        let n = normal.normalize();
        Self {
            diffuse: Image::from_fn(resolution, resolution, 3, |_, _, p| p.copy_from_slice(&diffuse.to_array())),
            specular: Image::from_fn(resolution, resolution, 3, |_, _, p| p.copy_from_slice(&specular.to_array())),
            roughness: Image::filled(resolution, resolution, 1, roughness),
            normal: Image::from_fn(resolution, resolution, 3, |_, _, p| p.copy_from_slice(&n.to_array())),
        }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.diffuse.width()
    }

    fn check_structure(&self) -> std::result::Result<(), Violation> {
        let r = self.diffuse.width();
        if self.diffuse.height() != r {
            return Err(Violation::NotSquare);
        }
        for (name, img, ch) in [
            ("diffuse", &self.diffuse, 3),
            ("specular", &self.specular, 3),
            ("roughness", &self.roughness, 1),
            ("normal", &self.normal, 3),
        ] {
            if img.width() != r || img.height() != r {
                return Err(Violation::ResolutionMismatch);
            }
            if img.channels() != ch {
                return Err(Violation::ChannelCount(name));
            }
        }
        Ok(())
    }

    /// Checks every invariant; returns the first violation found.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        self.check_structure()?;
        let range = |name: &'static str, img: &Image<T>, lo: f64, hi: f64| {
            for &v in img.data() {
                let v = v.as_f64();
                if !v.is_finite() {
                    return Err(Violation::NonFinite(name));
                }
                if v < lo - 1e-9 || v > hi + 1e-9 {
                    return Err(Violation::OutOfRange { map: name, value: v });
                }
            }
            Ok(())
        };
        range("diffuse", &self.diffuse, 0.0, 1.0)?;
        range("specular", &self.specular, 0.0, 1.0)?;
        range("roughness", &self.roughness, ROUGHNESS_MIN, 1.0)?;
        for (pixel, n) in self.normal.data().chunks_exact(3).enumerate() {
            let v = Vec3::from_slice(n);
            let len = v.length().as_f64();
            if !len.is_finite() {
                return Err(Violation::NonFinite("normal"));
            }
            if (len - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Violation::NormalNotUnit { pixel, length: len });
            }
            if v.z <= T::zero() {
                return Err(Violation::NormalBelowHorizon { pixel, z: v.z.as_f64() });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    #[inline]
    pub fn diffuse_at(&self, row: usize, col: usize) -> Vec3<T> {
        Vec3::from_slice(self.diffuse.pixel(row, col))
    }

    #[inline]
    pub fn specular_at(&self, row: usize, col: usize) -> Vec3<T> {
        Vec3::from_slice(self.specular.pixel(row, col))
    }

    #[inline]
    pub fn roughness_at(&self, row: usize, col: usize) -> T {
        self.roughness.get(row, col, 0)
    }

    #[inline]
    pub fn normal_at(&self, row: usize, col: usize) -> Vec3<T> {
        Vec3::from_slice(self.normal.pixel(row, col))
    }

    /// Applies the same pixel permutation to every map; normals are
    /// rotated about z by `normal_angle` so they follow the texture.
    pub fn transform(&self, f: impl Fn(&Image<T>) -> Image<T>, normal_angle: T) -> Self {
        let mut normal = f(&self.normal);
        if normal_angle != T::zero() {
            for px in normal.data_mut().chunks_exact_mut(3) {
                let v = Vec3::from_slice(px).rotate_z(normal_angle);
                px.copy_from_slice(&v.to_array());
            }
        }
        Self {
            diffuse: f(&self.diffuse),
            specular: f(&self.specular),
            roughness: f(&self.roughness),
            normal,
        }
    }

    /// 90 degree counter-clockwise rotation of the whole exemplar.
    pub fn rotate90_ccw(&self) -> Self {
        self.transform(Image::rotate90_ccw, T::FRAC_PI_2())
    }

    /// Per-map RMSE in physical units: diffuse, specular, roughness, normal.
    pub fn map_rmse(&self, other: &Self) -> Result<[T; 4]> {
        Ok([
            self.diffuse.rmse(&other.diffuse)?,
            self.specular.rmse(&other.specular)?,
            self.roughness.rmse(&other.roughness)?,
            self.normal.rmse(&other.normal)?,
        ])
    }

    pub fn cast<U: Real>(&self) -> MaterialMaps<U> {
        MaterialMaps {
            diffuse: self.diffuse.cast(),
            specular: self.specular.cast(),
            roughness: self.roughness.cast(),
            normal: self.normal.cast(),
        }
    }
}

/// The 10-channel image a denoiser consumes, values nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage<T>(Image<T>);

impl<T: Real> LatentImage<T> {
    pub fn new(image: Image<T>) -> Result<Self> {
        if image.channels() != LATENT_CHANNELS {
            return Err(Error::Shape(format!(
                "latent image needs {LATENT_CHANNELS} channels, got {}",
                image.channels()
            )));
        }
        if image.width() != image.height() {
            return Err(Error::Shape("latent image must be square".into()));
        }
        Ok(Self(image))
    }

    pub fn zeros(resolution: usize) -> Self {
        Self(Image::new(resolution, resolution, LATENT_CHANNELS))
    }

    pub fn from_planar(resolution: usize, planar: &[T]) -> Result<Self> {
        Self::new(Image::from_planar(resolution, resolution, LATENT_CHANNELS, planar)?)
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn image(&self) -> &Image<T> {
        &self.0
    }

    #[inline]
    pub fn image_mut(&mut self) -> &mut Image<T> {
        &mut self.0
    }

    pub fn into_image(self) -> Image<T> {
        self.0
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        self.0.data()
    }
}

#[inline]
fn to_signed<T: Real>(v: T) -> T {
    v + v - T::one()
}

#[inline]
fn from_signed<T: Real>(v: T) -> T {
    (v + T::one()) * T::lit(0.5)
}

/// Maps a material into the latent image: `v -> 2v - 1` for albedos and
/// roughness, raw xyz for normals.
pub fn encode_material<T: Real>(m: &MaterialMaps<T>) -> Result<LatentImage<T>> {
    m.check_structure().map_err(|v| Error::Shape(format!("{v:?}")))?;
    let r = m.resolution();
    let img = Image::from_fn(r, r, LATENT_CHANNELS, |row, col, px| {
        for k in 0..3 {
            px[DIFFUSE_OFFSET + k] = to_signed(m.diffuse.get(row, col, k));
            px[SPECULAR_OFFSET + k] = to_signed(m.specular.get(row, col, k));
            px[NORMAL_OFFSET + k] = m.normal.get(row, col, k);
        }
        px[ROUGHNESS_OFFSET] = to_signed(m.roughness.get(row, col, 0));
    });
    Ok(LatentImage(img))
}

/// Projects a normal onto the valid hemisphere: `z` floored, unit length.
#[inline]
pub fn sanitize_normal<T: Real>(n: Vec3<T>) -> Vec3<T> {
    Vec3::new(n.x, n.y, n.z.max(T::lit(NORMAL_Z_FLOOR))).normalize()
}

/// Inverse of [`encode_material`], total on finite input: values are clamped
/// into their physical ranges and normals are re-projected to unit length.
pub fn decode_material<T: Real>(l: &LatentImage<T>) -> Result<MaterialMaps<T>> {
    if let Some(index) = l.0.first_non_finite() {
        return Err(Error::NonFinite { what: "latent image", index });
    }
    let r = l.resolution();
    let (zero, one) = (T::zero(), T::one());
    let rough_min = T::lit(ROUGHNESS_MIN);
    let mut diffuse = Image::new(r, r, 3);
    let mut specular = Image::new(r, r, 3);
    let mut roughness = Image::new(r, r, 1);
    let mut normal = Image::new(r, r, 3);
    for row in 0..r {
        for col in 0..r {
            let px = l.0.pixel(row, col);
            for k in 0..3 {
                diffuse.set(row, col, k, from_signed(px[DIFFUSE_OFFSET + k]).max(zero).min(one));
                specular.set(row, col, k, from_signed(px[SPECULAR_OFFSET + k]).max(zero).min(one));
            }
            roughness.set(row, col, 0, from_signed(px[ROUGHNESS_OFFSET]).max(rough_min).min(one));
            let n = sanitize_normal(Vec3::from_slice(&px[NORMAL_OFFSET..NORMAL_OFFSET + 3]));
            normal.pixel_mut(row, col).copy_from_slice(&n.to_array());
        }
    }
    Ok(MaterialMaps {
        diffuse,
        specular,
        roughness,
        normal,
    })
}

//! Image synthesis for condition photographs.
//!
//! The exemplar occupies `[-0.5, 0.5]^2` in the `z = 0` plane, `+z` up,
//! `+x` to the right of the image and `+y` towards its top row. Every
//! render treats the per-pixel shading normal as the only geometry: there
//! is no displacement, shadowing or inter-reflection.

mod brdf;

use rand::RngCore;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

pub use brdf::{eval_brdf, fresnel_schlick, ggx_distribution, smith_g2, smith_lambda};

use crate::rng;
use crate::{Error, Image, MaterialMaps, Real, Result, Vec3};

/// Focal length that frames the exemplar from a distance of one exemplar size.
pub const REFERENCE_FOCAL_MM: f64 = 35.0;

/// Shape and scale of the Gamma law behind the colocated camera distance;
/// the drawn value is halved.
pub const CAMERA_DISTANCE_GAMMA: (f64, f64) = (2.0, 2.0);

/// Bounds of the log flash/environment brightness ratio.
pub fn flash_log_ratio_range() -> (f64, f64) {
    ((1.0f64 / 50.0).ln(), 1.5f64.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLight<T> {
    pub position: Vec3<T>,
    pub intensity: Vec3<T>,
}

impl<T: Real> PointLight<T> {
    pub fn new(position: Vec3<T>, intensity: Vec3<T>) -> Result<Self> {
        if !(position.z > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "light at z = {} is not above the surface plane",
                position.z
            )));
        }
        if intensity.x < T::zero() || intensity.y < T::zero() || intensity.z < T::zero() {
            return Err(Error::InvalidArgument("negative light intensity".into()));
        }
        Ok(Self { position, intensity })
    }

    pub fn white(position: Vec3<T>, intensity: T) -> Result<Self> {
        Self::new(position, Vec3::splat(intensity))
    }
}

/// Pinhole camera looking down at the exemplar. The field of view always
/// matches the exemplar, so the camera only determines view directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel<T> {
    pub position: Vec3<T>,
    pub focal_length_mm: T,
}

impl<T: Real> CameraModel<T> {
    /// Camera on the optical axis at `distance` exemplar sizes, focal
    /// length scaled so the exemplar fills the frame.
    pub fn at_distance(distance: T) -> Result<Self> {
        if !(distance > T::zero()) || !distance.is_finite() {
            return Err(Error::InvalidArgument(format!("camera distance {distance} must be positive")));
        }
        Ok(Self {
            position: Vec3::new(T::zero(), T::zero(), distance),
            focal_length_mm: T::lit(REFERENCE_FOCAL_MM) * distance,
        })
    }

    pub fn distance(&self) -> T {
        self.position.z
    }

    /// Unit vector from the surface point of `(row, col)` to the camera.
    #[inline]
    pub fn view_dir(&self, resolution: usize, row: usize, col: usize) -> Vec3<T> {
        (self.position - pixel_position(resolution, row, col)).normalize()
    }

    /// Per-pixel unit view vectors as an `R x R x 3` image.
    pub fn view_vectors(&self, resolution: usize) -> Image<T> {
        Image::from_fn(resolution, resolution, 3, |r, c, px| {
            px.copy_from_slice(&self.view_dir(resolution, r, c).to_array())
        })
    }
}

impl<T: Real> Default for CameraModel<T> {
    fn default() -> Self {
        Self::at_distance(T::one()).expect("unit distance is valid")
    }
}

/// World-space center of pixel `(row, col)`.
#[inline]
pub fn pixel_position<T: Real>(resolution: usize, row: usize, col: usize) -> Vec3<T> {
    let r = T::from_usize_lossy(resolution);
    let half = T::lit(0.5);
    Vec3::new(
        (T::from_usize_lossy(col) + half) / r - half,
        half - (T::from_usize_lossy(row) + half) / r,
        T::zero(),
    )
}

/// Equirectangular radiance map. Row 0 is the zenith (`+z`), the last row
/// the nadir; column 0 starts at azimuth `atan2(y, x) = 0` and azimuth grows
/// with the column index. `rotation` turns the map about `+z`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap<T> {
    image: Image<T>,
    pub rotation: T,
}

impl<T: Real> EnvironmentMap<T> {
    pub fn new(image: Image<T>, rotation: T) -> Result<Self> {
        if image.channels() != 3 || image.width() == 0 || image.height() == 0 {
            return Err(Error::Shape("environment map must be a non-empty RGB image".into()));
        }
        if let Some(i) = image.data().iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidArgument(format!("environment radiance at {i} is negative or non-finite")));
        }
        Ok(Self { image, rotation })
    }

    pub fn constant(radiance: Vec3<T>) -> Self {
        let image = Image::from_fn(8, 4, 3, |_, _, p| p.copy_from_slice(&radiance.to_array()));
        Self::new(image, T::zero()).expect("constant map is valid")
    }

    pub fn image(&self) -> &Image<T> {
        &self.image
    }

    pub fn with_rotation(mut self, rotation: T) -> Self {
        self.rotation = rotation;
        self
    }

    /// Bilinear radiance lookup (wrapping in azimuth).
    pub fn radiance(&self, dir: Vec3<T>) -> Vec3<T> {
        let (w, h) = (self.image.width(), self.image.height());
        let two_pi = T::PI() + T::PI();
        let theta = dir.z.max(-T::one()).min(T::one()).acos();
        let mut phi = dir.y.atan2(dir.x) - self.rotation;
        phi = phi - two_pi * (phi / two_pi).floor();
        let half = T::lit(0.5);
        let u = phi / two_pi * T::from_usize_lossy(w) - half;
        let v = (theta / T::PI() * T::from_usize_lossy(h) - half)
            .max(T::zero())
            .min(T::from_usize_lossy(h - 1));
        let u0f = u.floor();
        let fu = u - u0f;
        let v0f = v.floor();
        let fv = v - v0f;
        let wi = w as i64;
        let u0 = (u0f.to_i64().unwrap_or(0)).rem_euclid(wi) as usize;
        let u1 = (u0 + 1) % w;
        let v0 = v0f.to_usize().unwrap_or(0).min(h - 1);
        let v1 = (v0 + 1).min(h - 1);
        let px = |r: usize, c: usize| Vec3::from_slice(self.image.pixel(r, c));
        let one = T::one();
        (px(v0, u0) * (one - fu) + px(v0, u1) * fu) * (one - fv) + (px(v1, u0) * (one - fu) + px(v1, u1) * fu) * fv
    }

    pub fn is_black(&self) -> bool {
        self.image.data().iter().all(|&v| v == T::zero())
    }
}

fn render_pixels<T: Real>(resolution: usize, f: impl Fn(usize, usize) -> Vec3<T> + Sync) -> Image<T> {
    let mut data = vec![T::zero(); resolution * resolution * 3];
    data.par_chunks_mut(resolution * 3).enumerate().for_each(|(row, line)| {
        for col in 0..resolution {
            line[col * 3..col * 3 + 3].copy_from_slice(&f(row, col).to_array());
        }
    });
    Image::from_vec(resolution, resolution, 3, data).expect("sized by construction")
}

/// Direct illumination from one point light, in linear radiance.
pub fn render_point<T: Real>(m: &MaterialMaps<T>, light: &PointLight<T>, cam: &CameraModel<T>) -> Result<Image<T>> {
    if !(light.position.z > T::zero()) {
        return Err(Error::InvalidArgument("light below the surface plane".into()));
    }
    let res = m.resolution();
    Ok(render_pixels(res, |row, col| {
        let p = pixel_position::<T>(res, row, col);
        let to_light = light.position - p;
        let dist2 = to_light.length_squared();
        let wi = to_light * dist2.sqrt().recip();
        let wo = cam.view_dir(res, row, col);
        let n = m.normal_at(row, col);
        let cos = n.dot(wi);
        if cos <= T::zero() {
            return Vec3::zero();
        }
        let f = eval_brdf(m.diffuse_at(row, col), m.specular_at(row, col), m.roughness_at(row, col), n, wi, wo);
        f.mul_elem(light.intensity) * (cos / dist2)
    }))
}

/// Radiant intensity of the colocated flash: scales with the squared
/// distance so the exposure at the exemplar center does not depend on it.
pub fn colocated_intensity<T: Real>(distance: T) -> T {
    distance * distance
}

/// Half of a Gamma(shape 2, scale 2) draw, in exemplar sizes (mean 2).
pub fn sample_camera_distance<T: Real>(rng: &mut impl RngCore) -> T {
    let gamma = Gamma::new(CAMERA_DISTANCE_GAMMA.0, CAMERA_DISTANCE_GAMMA.1).expect("valid gamma");
    T::lit(0.5 * gamma.sample(rng))
}

/// Photograph under a flash colocated with the camera at `distance`,
/// together with the per-pixel view vectors.
pub fn render_colocated<T: Real>(m: &MaterialMaps<T>, distance: T) -> Result<(Image<T>, Image<T>)> {
    let cam = CameraModel::at_distance(distance)?;
    let light = PointLight::white(cam.position, colocated_intensity(distance))?;
    let img = render_point(m, &light, &cam)?;
    Ok((img, cam.view_vectors(m.resolution())))
}

/// Orthonormal basis with `n` as third axis.
fn tangent_frame<T: Real>(n: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    let helper = if n.x.abs() > T::lit(0.9) {
        Vec3::new(T::zero(), T::one(), T::zero())
    } else {
        Vec3::new(T::one(), T::zero(), T::zero())
    };
    let t = helper.cross(n).normalize();
    let b = n.cross(t);
    (t, b)
}

/// Single-bounce environment lighting seen from `cam`, estimated with
/// cosine-weighted hemisphere sampling around each shading normal.
pub fn render_env_from<T: Real>(
    m: &MaterialMaps<T>,
    env: &EnvironmentMap<T>,
    cam: &CameraModel<T>,
    samples_per_pixel: usize,
    rng: &mut impl RngCore,
) -> Result<Image<T>> {
    if samples_per_pixel == 0 {
        return Err(Error::InvalidArgument("samples_per_pixel must be at least 1".into()));
    }
    let seed = rng::child_seed(rng);
    let res = m.resolution();
    if env.is_black() {
        return Ok(Image::new(res, res, 3));
    }
    let inv_spp = T::from_usize_lossy(samples_per_pixel).recip();
    Ok(render_pixels(res, |row, col| {
        let mut px_rng = rng::stream(seed, (row * res + col) as u64);
        let n = m.normal_at(row, col);
        let wo = cam.view_dir(res, row, col);
        let (kd, ks, rough) = (m.diffuse_at(row, col), m.specular_at(row, col), m.roughness_at(row, col));
        let (t, b) = tangent_frame(n);
        let mut acc = Vec3::zero();
        for _ in 0..samples_per_pixel {
            let u1 = T::lit(unit_f64(&mut px_rng));
            let u2 = T::lit(unit_f64(&mut px_rng));
            let r = u1.sqrt();
            let phi = (T::PI() + T::PI()) * u2;
            let (s, c) = phi.sin_cos();
            let z = (T::one() - u1).max(T::zero()).sqrt();
            let wi = (t * (r * c) + b * (r * s) + n * z).normalize();
            // f * L * cos / (cos / pi)
            let f = eval_brdf(kd, ks, rough, n, wi, wo);
            acc = acc + f.mul_elem(env.radiance(wi)) * T::PI();
        }
        acc * inv_spp
    }))
}

#[inline]
fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// [`render_env_from`] with the reference camera one exemplar size above.
pub fn render_env<T: Real>(
    m: &MaterialMaps<T>,
    env: &EnvironmentMap<T>,
    samples_per_pixel: usize,
    rng: &mut impl RngCore,
) -> Result<Image<T>> {
    render_env_from(m, env, &CameraModel::default(), samples_per_pixel, rng)
}

/// Pixel-aligned flash / no-flash photographs.
#[derive(Debug, Clone)]
pub struct FlashPair<T> {
    pub flash: Image<T>,
    pub no_flash: Image<T>,
    /// Multiplier applied to the unit-exposure flash render.
    pub flash_scale: T,
}

/// Renders a no-flash photograph under `env` and a flash photograph that
/// adds a colocated flash whose mean luminance is `exp(log_ratio)` times
/// that of the environment-only image. With a black environment the flash
/// term is left at unit exposure.
pub fn synth_flash_noflash<T: Real>(
    m: &MaterialMaps<T>,
    env: &EnvironmentMap<T>,
    cam: &CameraModel<T>,
    log_ratio: T,
    samples_per_pixel: usize,
    rng: &mut impl RngCore,
) -> Result<FlashPair<T>> {
    let (lo, hi) = flash_log_ratio_range();
    let lr = log_ratio.as_f64();
    if !(lr >= lo - 1e-12 && lr <= hi + 1e-12) {
        return Err(Error::InvalidArgument(format!("log ratio {lr} outside [{lo}, {hi}]")));
    }
    let no_flash = render_env_from(m, env, cam, samples_per_pixel, rng)?;
    let light = PointLight::white(cam.position, colocated_intensity(cam.distance()))?;
    let flash_term = render_point(m, &light, cam)?;
    let env_lum = mean_luminance(&no_flash);
    let flash_lum = mean_luminance(&flash_term);
    let flash_scale = if env_lum > T::zero() && flash_lum > T::zero() {
        log_ratio.exp() * env_lum / flash_lum
    } else {
        T::one()
    };
    let mut flash = no_flash.clone();
    for (f, &t) in flash.data_mut().iter_mut().zip(flash_term.data()) {
        *f += t * flash_scale;
    }
    Ok(FlashPair {
        flash,
        no_flash,
        flash_scale,
    })
}

/// Mean Rec. 709 luminance of an RGB image.
pub fn mean_luminance<T: Real>(img: &Image<T>) -> T {
    if img.pixel_count() == 0 {
        return T::zero();
    }
    let sum: T = img.data().chunks_exact(3).map(|p| Vec3::from_slice(p).luminance()).sum();
    sum / T::from_usize_lossy(img.pixel_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn lambertian(res: usize, rho: f64) -> MaterialMaps<f64> {
        MaterialMaps::constant(res, Vec3::splat(rho), Vec3::zero(), 0.5, Vec3::new(0.0, 0.0, 1.0))
    }

    #[test]
    fn lambertian_on_axis_matches_closed_form() {
        let m = lambertian(1, 0.6);
        for d in [0.5, 1.0, 3.0] {
            let cam = CameraModel::at_distance(d).unwrap();
            let light = PointLight::white(Vec3::new(0.0, 0.0, d), 2.0).unwrap();
            let img = render_point(&m, &light, &cam).unwrap();
            let expect = 0.6 * 2.0 / (std::f64::consts::PI * d * d);
            assert!((img.get(0, 0, 1) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_square_falloff() {
        let m = lambertian(1, 0.5);
        let cam = CameraModel::default();
        let near = render_point(&m, &PointLight::white(Vec3::new(0.0, 0.0, 1.0), 1.0).unwrap(), &cam).unwrap();
        let far = render_point(&m, &PointLight::white(Vec3::new(0.0, 0.0, 2.0), 1.0).unwrap(), &cam).unwrap();
        let ratio = far.get(0, 0, 0) / near.get(0, 0, 0);
        assert!((ratio - 0.25).abs() < 1e-4 * 0.25);
    }

    #[test]
    fn zero_intensity_and_bad_light() {
        let m = lambertian(4, 0.5);
        let dark = render_point(&m, &PointLight::white(Vec3::new(0.2, 0.1, 1.0), 0.0).unwrap(), &CameraModel::default()).unwrap();
        assert!(dark.data().iter().all(|&v| v == 0.0));
        let below = PointLight { position: Vec3::new(0.0, 0.0, -1.0), intensity: Vec3::splat(1.0) };
        assert!(render_point(&m, &below, &CameraModel::default()).is_err());
        assert!(PointLight::white(Vec3::new(0.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn colocated_center_view_is_axis() {
        let m = lambertian(5, 0.5);
        let (_, views) = render_colocated(&m, 1.0).unwrap();
        assert_eq!(views.pixel(2, 2), &[0.0, 0.0, 1.0]);
        for p in views.data().chunks_exact(3) {
            assert!((Vec3::from_slice(p).length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn colocated_render_of_mirror_symmetric_material_is_symmetric() {
        let res = 8;
        let mut m = MaterialMaps::constant(res, Vec3::splat(0.4), Vec3::splat(0.05), 0.2, Vec3::new(0.0, 0.0, 1.0));
        for r in 0..res {
            for c in 0..res / 2 {
                let v = 0.1 + 0.05 * ((r * 3 + c) % 7) as f64;
                m.diffuse.set(r, c, 0, v);
                m.diffuse.set(r, res - 1 - c, 0, v);
                let n = Vec3::new(0.2 * (c as f64 / res as f64), 0.1, 1.0).normalize();
                m.normal.pixel_mut(r, c).copy_from_slice(&n.to_array());
                m.normal.pixel_mut(r, res - 1 - c).copy_from_slice(&Vec3::new(-n.x, n.y, n.z).to_array());
            }
        }
        let (img, _) = render_colocated(&m, 1.3).unwrap();
        let mirrored = img.flip_horizontal();
        for (a, b) in img.data().iter().zip(mirrored.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn camera_distance_sampler_mean() {
        let mut rng = seeded(5);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_camera_distance::<f64>(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn white_furnace() {
        let res = 6;
        let mut m = lambertian(res, 0.7);
        let mut rng = seeded(1);
        for px in m.normal.data_mut().chunks_exact_mut(3) {
            let n = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
            px.copy_from_slice(&n.to_array());
        }
        let env = EnvironmentMap::constant(Vec3::splat(1.0));
        let img = render_env(&m, &env, 256, &mut rng).unwrap();
        for &v in img.data() {
            assert!((v - 0.7).abs() < 0.02 * 0.7, "{v}");
        }
    }

    #[test]
    fn env_rotation_periodic_and_black_inputs() {
        let env_img = Image::from_fn(16, 8, 3, |r, c, p| {
            p[0] = (r * 16 + c) as f64 * 0.01;
            p[1] = 0.5;
            p[2] = (c % 3) as f64;
        });
        let m = MaterialMaps::constant(4, Vec3::splat(0.5), Vec3::splat(0.04), 0.3, Vec3::new(0.1, 0.0, 1.0));
        let env = EnvironmentMap::new(env_img, 0.3).unwrap();
        let a = render_env(&m, &env, 8, &mut seeded(2)).unwrap();
        let env2 = env.clone().with_rotation(0.3 + 2.0 * std::f64::consts::PI);
        let b = render_env(&m, &env2, 8, &mut seeded(2)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let black_mat = MaterialMaps::constant(4, Vec3::zero(), Vec3::zero(), 0.3, Vec3::new(0.0, 0.0, 1.0));
        assert!(render_env(&black_mat, &env, 8, &mut seeded(2)).unwrap().data().iter().all(|&v| v == 0.0));
        let black_env = EnvironmentMap::constant(Vec3::zero());
        assert!(render_env(&m, &black_env, 8, &mut seeded(2)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(render_env(&m, &env, 0, &mut seeded(2)).is_err());
    }

    #[test]
    fn env_lookup_convention() {
        // zenith row bright, everything else dark
        let img = Image::from_fn(8, 4, 3, |r, _, p| p.fill(if r == 0 { 1.0 } else { 0.0 }));
        let env = EnvironmentMap::new(img, 0.0).unwrap();
        assert_eq!(env.radiance(Vec3::new(0.0, 0.0, 1.0)), Vec3::splat(1.0));
        assert_eq!(env.radiance(Vec3::new(0.0, 0.0, -1.0)), Vec3::zero());
    }

    #[test]
    fn flash_pair_ratio_and_ordering() {
        let m = MaterialMaps::constant(6, Vec3::new(0.5, 0.3, 0.2), Vec3::splat(0.05), 0.3, Vec3::new(0.0, 0.0, 1.0));
        let env = EnvironmentMap::constant(Vec3::new(0.8, 0.9, 1.0));
        let cam = CameraModel::default();
        let lr = 1.5f64.ln();
        let pair = synth_flash_noflash(&m, &env, &cam, lr, 16, &mut seeded(3)).unwrap();
        let mut term = pair.flash.clone();
        for (t, &n) in term.data_mut().iter_mut().zip(pair.no_flash.data()) {
            *t -= n;
        }
        let ratio = mean_luminance(&term) / mean_luminance(&pair.no_flash);
        assert!((ratio - 1.5).abs() < 1e-3, "{ratio}");
        for (f, n) in pair.flash.data().iter().zip(pair.no_flash.data()) {
            assert!(f >= n);
        }
        assert!(synth_flash_noflash(&m, &env, &cam, 0.5, 4, &mut seeded(3)).is_err());
        assert!(synth_flash_noflash(&m, &env, &cam, -4.0, 4, &mut seeded(3)).is_err());
    }

    #[test]
    fn flash_pair_with_black_env_is_plain_colocated_render() {
        let m = MaterialMaps::constant(4, Vec3::splat(0.5), Vec3::splat(0.05), 0.3, Vec3::new(0.0, 0.0, 1.0));
        let cam = CameraModel::at_distance(1.5).unwrap();
        let pair = synth_flash_noflash(&m, &EnvironmentMap::constant(Vec3::zero()), &cam, 0.0, 4, &mut seeded(3)).unwrap();
        assert!(pair.no_flash.data().iter().all(|&v| v == 0.0));
        let (colocated, _) = render_colocated(&m, 1.5).unwrap();
        assert_eq!(pair.flash, colocated);
    }

    #[test]
    fn point_render_rotation_invariance() {
        let res = 8;
        let m = MaterialMaps::constant(res, Vec3::splat(0.5), Vec3::splat(0.04), 0.25, Vec3::new(0.0, 0.0, 1.0));
        let cam = CameraModel::default();
        let l = Vec3::new(0.3, -0.2, 0.8);
        let a = render_point(&m, &PointLight::white(l, 1.0).unwrap(), &cam).unwrap();
        let l_rot = l.rotate_z(std::f64::consts::FRAC_PI_2);
        let b = render_point(&m, &PointLight::white(l_rot, 1.0).unwrap(), &cam).unwrap();
        let a_rot = a.rotate90_ccw();
        for (x, y) in a_rot.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

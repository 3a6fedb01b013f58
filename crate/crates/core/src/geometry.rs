//! Normal map <-> height field conversion.
//!
//! Integration solves the least-squares problem `min ||D h - g||^2` where
//! `D` takes forward differences between neighbouring pixels and `g` holds
//! the normal-implied slopes averaged onto the same pixel edges. Its normal
//! equations are a Poisson problem with Neumann boundary conditions, which
//! the type-II cosine transform diagonalizes exactly.

use crate::material::NORMAL_Z_FLOOR;
use crate::{Error, Image, Real, Result, Vec3};

/// Bound on the magnitude of the height gradient implied by a normal.
pub const MAX_SLOPE: f64 = 20.0;

/// Zero-mean height samples, in exemplar units.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField<T>(Image<T>);

impl<T: Real> HeightField<T> {
    /// Wraps `image` (one channel) after removing its mean.
    pub fn new(image: Image<T>) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::Shape("height field must have one channel".into()));
        }
        if let Some(index) = image.first_non_finite() {
            return Err(Error::NonFinite { what: "height field", index });
        }
        let mean = image.mean();
        Ok(Self(image.map(|v| v - mean)))
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        Self::new(Image::from_fn(width, height, 1, |r, c, p| p[0] = f(r, c)))
    }

    pub fn image(&self) -> &Image<T> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.0.get(row, col, 0)
    }

    pub fn rmse(&self, other: &Self) -> Result<T> {
        self.0.rmse(&other.0)
    }
}

/// Result of [`normals_to_height`].
#[derive(Debug, Clone)]
pub struct Integration<T> {
    pub height: HeightField<T>,
    /// Pixels whose `z` was raised to the floor or whose slope was capped.
    pub clamped: usize,
}

/// Orthonormal DCT-II matrix, `n x n`, row `k` is frequency `k`.
fn dct_matrix<T: Real>(n: usize) -> Vec<T> {
    let nf = n as f64;
    let mut m = vec![T::zero(); n * n];
    for k in 0..n {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            m[k * n + i] = T::lit(s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos());
        }
    }
    m
}

/// `left * x * right^T` for row-major `x` of shape `rows x cols`, with
/// `left` (`rows x rows`) and `right` (`cols x cols`) optionally transposed.
fn separable<T: Real>(x: &[T], rows: usize, cols: usize, left: &[T], left_t: bool, right: &[T], right_t: bool) -> Vec<T> {
    let mut tmp = vec![T::zero(); rows * cols];
    let (lrs, lcs) = if left_t { (1, rows) } else { (rows, 1) };
    T::gemm(rows, rows, cols, T::one(), left, lrs, lcs, x, cols, 1, T::zero(), &mut tmp, cols, 1);
    let mut out = vec![T::zero(); rows * cols];
    // tmp * right^T
    let (rrs, rcs) = if right_t { (cols, 1) } else { (1, cols) };
    T::gemm(rows, cols, cols, T::one(), &tmp, cols, 1, right, rrs, rcs, T::zero(), &mut out, cols, 1);
    out
}

/// Integrates a unit normal map into a zero-mean height field.
///
/// `pixel_size` is the world extent of one pixel (for an exemplar of unit
/// size, `1 / resolution`).
pub fn normals_to_height<T: Real>(normals: &Image<T>, pixel_size: T) -> Result<Integration<T>> {
    if normals.channels() != 3 {
        return Err(Error::Shape("normal map needs 3 channels".into()));
    }
    if !(pixel_size > T::zero()) {
        return Err(Error::InvalidArgument("pixel size must be positive".into()));
    }
    let (w, h) = (normals.width(), normals.height());
    if w == 0 || h == 0 {
        return Err(Error::Shape("empty normal map".into()));
    }
    if let Some(index) = normals.first_non_finite() {
        return Err(Error::NonFinite { what: "normal map", index });
    }
    let floor = T::lit(NORMAL_Z_FLOOR);
    let max_slope = T::lit(MAX_SLOPE);
    let mut clamped = 0usize;
    // height change per pixel step along columns (right) and rows (down)
    let mut d_col = vec![T::zero(); w * h];
    let mut d_row = vec![T::zero(); w * h];
    for r in 0..h {
        for c in 0..w {
            let n = Vec3::from_slice(normals.pixel(r, c));
            let mut hit = false;
            let nz = if n.z < floor {
                hit = true;
                floor
            } else {
                n.z
            };
            let (mut gx, mut gy) = (-n.x / nz, -n.y / nz);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > max_slope {
                hit = true;
                gx = gx * max_slope / mag;
                gy = gy * max_slope / mag;
            }
            clamped += hit as usize;
            d_col[r * w + c] = gx * pixel_size;
            d_row[r * w + c] = -gy * pixel_size;
        }
    }
    if clamped > 0 {
        log::warn!("normal integration clamped {clamped} of {} pixels", w * h);
    }

    // divergence of the edge-averaged gradient field
    let half = T::lit(0.5);
    let mut div = vec![T::zero(); w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut b = T::zero();
            if c + 1 < w {
                b += (d_col[i] + d_col[i + 1]) * half;
            }
            if c > 0 {
                b -= (d_col[i - 1] + d_col[i]) * half;
            }
            if r + 1 < h {
                b += (d_row[i] + d_row[i + w]) * half;
            }
            if r > 0 {
                b -= (d_row[i - w] + d_row[i]) * half;
            }
            // the Neumann Laplacian is sum(h_nb - h), so its normal equation is L h = -div
            div[i] = -b;
        }
    }

    let ch = dct_matrix::<T>(h);
    let cw = dct_matrix::<T>(w);
    let mut spec = separable(&div, h, w, &ch, false, &cw, false);
    let two = T::lit(2.0);
    for k in 0..h {
        let lk = two - two * (T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(h)).cos();
        for l in 0..w {
            let ll = two - two * (T::PI() * T::from_usize_lossy(l) / T::from_usize_lossy(w)).cos();
            let denom = lk + ll;
            spec[k * w + l] = if k == 0 && l == 0 { T::zero() } else { spec[k * w + l] / denom };
        }
    }
    let heights = separable(&spec, h, w, &ch, true, &cw, true);
    let height = HeightField::new(Image::from_vec(w, h, 1, heights)?)?;
    Ok(Integration { height, clamped })
}

/// Normals from central differences of `h` (one-sided at the border).
pub fn height_to_normals<T: Real>(h: &HeightField<T>, pixel_size: T) -> Image<T> {
    let (w, hh) = (h.width(), h.height());
    let half = T::lit(0.5);
    let diff = |lo: T, hi: T, span: usize| if span == 2 { (hi - lo) * half } else { hi - lo };
    Image::from_fn(w, hh, 3, |r, c, px| {
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(hh - 1));
        let dcol = if w > 1 { diff(h.get(r, c0), h.get(r, c1), c1 - c0) } else { T::zero() };
        let drow = if hh > 1 { diff(h.get(r0, c), h.get(r1, c), r1 - r0) } else { T::zero() };
        let gx = dcol / pixel_size;
        let gy = -drow / pixel_size;
        px.copy_from_slice(&Vec3::new(-gx, -gy, T::one()).normalize().to_array());
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn plane_normals(res: usize, sx: f64, sy: f64) -> Image<f64> {
        let n = Vec3::new(-sx, -sy, 1.0).normalize();
        Image::from_fn(res, res, 3, |_, _, p| p.copy_from_slice(&n.to_array()))
    }

    #[test]
    fn flat_normals_integrate_to_zero() {
        let out = normals_to_height(&plane_normals(16, 0.0, 0.0), 1.0 / 16.0).unwrap();
        assert!(out.height.image().data().iter().all(|v| v.abs() < 1e-15));
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn tilted_normals_integrate_to_plane() {
        let res = 32;
        let ps = 1.0 / res as f64;
        let (sx, sy) = (0.3, -0.7);
        let out = normals_to_height(&plane_normals(res, sx, sy), ps).unwrap();
        let expect = HeightField::from_fn(res, res, |r, c| {
            let x = (c as f64 + 0.5) * ps;
            let y = -(r as f64 + 0.5) * ps;
            sx * x + sy * y
        })
        .unwrap();
        for (a, b) in out.height.image().data().iter().zip(expect.image().data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn plane_slope_to_normal() {
        let s = 0.4;
        let h = HeightField::from_fn(8, 8, |_, c| s * c as f64 / 8.0).unwrap();
        let n = height_to_normals(&h, 1.0 / 8.0);
        let expect = Vec3::new(-s, 0.0, 1.0).normalize();
        for p in n.data().chunks_exact(3) {
            assert!((Vec3::from_slice(p) - expect).length() < 1e-12);
        }
        let shifted = HeightField::new(h.image().map(|v| v + 3.0)).unwrap();
        assert!(height_to_normals(&shifted, 1.0 / 8.0).rmse(&n).unwrap() < 1e-12);
        let zero = HeightField::from_fn(4, 4, |_, _| 0.0).unwrap();
        assert!(height_to_normals(&zero, 0.25).data().chunks_exact(3).all(|p| p == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn sinusoid_round_trip() {
        let res = 64;
        let ps = 1.0 / res as f64;
        let h = HeightField::from_fn(res, res, |r, c| {
            let x = (c as f64 + 0.5) * ps;
            let y = (r as f64 + 0.5) * ps;
            (2.0 * PI * x).sin() * (2.0 * PI * y).cos()
        })
        .unwrap();
        let n = height_to_normals(&h, ps);
        let back = normals_to_height(&n, ps).unwrap().height;
        let rmse = back.rmse(&h).unwrap();
        assert!(rmse < 1e-2, "{rmse}");
    }

    #[test]
    fn integration_is_linear_in_slope() {
        let res = 16;
        let ps = 1.0 / res as f64;
        let h = HeightField::from_fn(res, res, |r, c| 0.01 * ((r * 7 + c * 3) as f64 * 0.3).sin()).unwrap();
        let h2 = HeightField::new(h.image().map(|v| 2.0 * v)).unwrap();
        let a = normals_to_height(&height_to_normals(&h, ps), ps).unwrap().height;
        let b = normals_to_height(&height_to_normals(&h2, ps), ps).unwrap().height;
        for (x, y) in a.image().data().iter().zip(b.image().data()) {
            assert!((2.0 * x - y).abs() < 1e-3 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn rotation_by_half_turn_commutes() {
        let res = 12;
        let ps = 1.0 / res as f64;
        let mut n = Image::from_fn(res, res, 3, |r, c, p| {
            let v = Vec3::new(0.3 * ((r * c) as f64 * 0.7).sin(), 0.2 * (c as f64 * 0.4).cos(), 1.0).normalize();
            p.copy_from_slice(&v.to_array());
        });
        let a = normals_to_height(&n, ps).unwrap().height;
        n = n.rotate180();
        for p in n.data_mut().chunks_exact_mut(3) {
            p[0] = -p[0];
            p[1] = -p[1];
        }
        let b = normals_to_height(&n, ps).unwrap().height;
        let a_rot = a.image().rotate180();
        for (x, y) in a_rot.data().iter().zip(b.image().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grazing_normals_are_counted() {
        let mut n = plane_normals(4, 0.0, 0.0);
        n.pixel_mut(1, 1).copy_from_slice(&[1.0, 0.0, 0.0]);
        let out = normals_to_height(&n, 0.25).unwrap();
        assert_eq!(out.clamped, 1);
        assert!(out.height.image().first_non_finite().is_none());
    }
}

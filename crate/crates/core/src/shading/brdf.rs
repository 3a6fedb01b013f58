//! Microfacet reflectance: Lambertian diffuse plus a GGX specular lobe with
//! height-correlated Smith masking-shadowing and Schlick Fresnel.

use crate::{Real, Vec3};

/// GGX normal distribution for microfacet normal `m` with `cos_nm = n.m`.
#[inline]
pub fn ggx_distribution<T: Real>(cos_nm: T, alpha: T) -> T {
    if cos_nm <= T::zero() {
        return T::zero();
    }
    let a2 = alpha * alpha;
    let d = cos_nm * cos_nm * (a2 - T::one()) + T::one();
    a2 / (T::PI() * d * d)
}

/// Smith Lambda for GGX.
#[inline]
pub fn smith_lambda<T: Real>(cos_theta: T, alpha: T) -> T {
    let c2 = cos_theta * cos_theta;
    let tan2 = (T::one() - c2).max(T::zero()) / c2;
    (-T::one() + (T::one() + alpha * alpha * tan2).sqrt()) * T::lit(0.5)
}

/// Height-correlated masking-shadowing `G2 = 1 / (1 + L(wi) + L(wo))`.
#[inline]
pub fn smith_g2<T: Real>(cos_i: T, cos_o: T, alpha: T) -> T {
    T::one() / (T::one() + smith_lambda(cos_i, alpha) + smith_lambda(cos_o, alpha))
}

/// Schlick Fresnel with `f0` as normal-incidence reflectance. The grazing
/// reflectance is `min(1, 50 * mean(f0))`, so any dielectric-or-brighter
/// specular albedo behaves as plain Schlick while a black specular albedo
/// reflects nothing at all.
#[inline]
pub fn fresnel_schlick<T: Real>(f0: Vec3<T>, cos_d: T) -> Vec3<T> {
    let f90 = (T::lit(50.0) * f0.mean()).min(T::one());
    let w = (T::one() - cos_d.max(T::zero()).min(T::one())).powi(5);
    f0 + (Vec3::splat(f90) - f0) * w
}

/// BRDF value (per steradian) for unit `n`, `wi` (towards the light) and
/// `wo` (towards the viewer).
pub fn eval_brdf<T: Real>(diffuse: Vec3<T>, specular: Vec3<T>, roughness: T, n: Vec3<T>, wi: Vec3<T>, wo: Vec3<T>) -> Vec3<T> {
    let cos_i = n.dot(wi);
    let cos_o = n.dot(wo);
    if cos_i <= T::zero() || cos_o <= T::zero() {
        return Vec3::zero();
    }
    let lambert = diffuse * T::FRAC_1_PI();
    let Some(h) = (wi + wo).try_normalize() else {
        return lambert;
    };
    let alpha = roughness.max(T::lit(crate::ROUGHNESS_MIN));
    let d = ggx_distribution(n.dot(h), alpha);
    let g = smith_g2(cos_i, cos_o, alpha);
    let f = fresnel_schlick(specular, wi.dot(h));
    lambert + f * (d * g / (T::lit(4.0) * cos_i * cos_o))
}

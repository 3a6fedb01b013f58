//! SVBRDF material maps, their latent-image codec, microfacet shading and
//! normal-map integration.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the bottom of this file name the common instantiations.

mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod material;
pub mod rng;
mod scalar;
pub mod shading;
mod vec3;

pub use error::{Error, Result};
pub use geometry::{height_to_normals, normals_to_height, HeightField, Integration};
pub use image::Image;
pub use material::{
    decode_material, encode_material, sanitize_normal, LatentImage, MaterialMaps, Violation, LATENT_CHANNELS,
    ROUGHNESS_MIN,
};
pub use scalar::Real;
pub use shading::{CameraModel, EnvironmentMap, PointLight};
pub use vec3::Vec3;

pub type MaterialMapsF32 = MaterialMaps<f32>;
pub type MaterialMapsF64 = MaterialMaps<f64>;
pub type LatentImageF32 = LatentImage<f32>;
pub type LatentImageF64 = LatentImage<f64>;
pub type ImageF32 = Image<f32>;
pub type ImageF64 = Image<f64>;
pub type HeightFieldF32 = HeightField<f32>;
pub type HeightFieldF64 = HeightField<f64>;

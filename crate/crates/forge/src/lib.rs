//! Training-corpus synthesis.
//!
//! Source materials are cut into rotated crops, a random subset gets its
//! roughness blended with a procedural map, and further exemplars are made
//! as piece-wise constant mixtures of two or three crops. Every record in
//! the resulting [`DatasetManifest`] carries the parameters needed to
//! rebuild its material bit-for-bit.

pub mod crop;
mod error;
pub mod features;
pub mod manifest;
pub mod mix;
pub mod roughness;
pub mod source;
pub mod specular;

pub use crop::{apply_crop, random_crops, CropSpec};
pub use error::{Error, Result};
pub use features::RandomFeatureNet;
pub use manifest::{build_manifest, DatasetManifest, ExemplarRecord, ForgeConfig, Provenance, Split};
pub use mix::{mix_materials, MixRecipe};
pub use roughness::{procedural_roughness, RoughnessBlend};
pub use source::{procedural_source, SourceSet};
pub use specular::{assign_specular, SourceMaps, SPECULAR_RANGE};

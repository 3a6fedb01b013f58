//! Loading forged corpora for training.

use std::path::Path;

use anyhow::{Context, Result};
use svbrdf_core::io::load_material;
use svbrdf_core::MaterialMaps;
use svbrdf_forge::manifest::center_crop;
use svbrdf_forge::{DatasetManifest, Split};

use crate::sidecar::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Training exemplars of a materialized corpus, centre-cropped to
/// `resolution`, in manifest order. Records smaller than `resolution` are
/// skipped.
pub fn load_training_set(root: &Path, resolution: usize, limit: Option<usize>) -> Result<(Vec<MaterialMaps<f64>>, String)> {
    let path = root.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = DatasetManifest::from_jsonl(std::str::from_utf8(&bytes)?)?;
    let mut out = Vec::new();
    for r in manifest.records.iter().filter(|r| r.split == Split::Train && r.resolution >= resolution) {
        if limit.is_some_and(|l| out.len() >= l) {
            break;
        }
        let m = load_material(&root.join(&r.path)).with_context(|| format!("loading {}", r.id))?;
        out.push(center_crop(&m, resolution)?);
    }
    anyhow::ensure!(!out.is_empty(), "no training exemplars of at least {resolution}px in {}", root.display());
    Ok((out, sha256_hex(&bytes)))
}

//! Capture directories: condition photographs plus a description of how
//! they were lit.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use svbrdf_core::io::{read_hdr, write_hdr};
use svbrdf_diffusion::{CaptureLighting, ConditionStack, Lighting, Variant};

pub const CAPTURE_FILE: &str = "capture.json";

/// Where the environment maps of a capture come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSource {
    Procedural { count: usize, seed: u64, spp: usize },
    Directory { path: String, spp: usize },
}

impl EnvSource {
    pub fn lighting(&self) -> Result<Lighting> {
        Ok(match self {
            EnvSource::Procedural { count, seed, spp } => Lighting::procedural(*count, *seed, *spp),
            EnvSource::Directory { path, spp } => Lighting::from_dir(Path::new(path), *spp)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureInfo {
    pub variant: Variant,
    /// Unknown for real photographs, which rules out render-error selection.
    pub lighting: Option<CaptureLighting>,
    pub environments: Option<EnvSource>,
    pub photos: Vec<String>,
    pub view: Option<String>,
}

pub fn write_capture(dir: &Path, stack: &ConditionStack<f64>, info_base: CaptureInfo) -> Result<CaptureInfo> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut info = info_base;
    info.photos.clear();
    for (i, p) in stack.photos.iter().enumerate() {
        let name = format!("photo_{i}.exr");
        write_hdr(p, &dir.join(&name))?;
        info.photos.push(name);
    }
    info.view = match &stack.view {
        Some(v) => {
            write_hdr(v, &dir.join("view.exr"))?;
            Some("view.exr".into())
        }
        None => None,
    };
    fs::write(dir.join(CAPTURE_FILE), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(info)
}

pub fn read_capture(dir: &Path) -> Result<(CaptureInfo, ConditionStack<f64>)> {
    let path = dir.join(CAPTURE_FILE);
    let info: CaptureInfo =
        serde_json::from_str(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)?;
    let photos = info
        .photos
        .iter()
        .map(|p| Ok(read_hdr(&dir.join(p))?))
        .collect::<Result<Vec<_>>>()?;
    let view = info.view.as_ref().map(|v| read_hdr(&dir.join(v))).transpose()?;
    let stack = ConditionStack::new(photos, view)?;
    ensure!(
        stack.channels() == info.variant.cond_channels(),
        "capture provides {} channels, variant {} needs {}",
        stack.channels(),
        info.variant.name(),
        info.variant.cond_channels()
    );
    Ok((info, stack))
}

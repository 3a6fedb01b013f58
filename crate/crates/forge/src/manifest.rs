//! Corpus recipe: configuration, manifest records and materialization.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use svbrdf_core::io::save_material;
use svbrdf_core::rng::{mix_seed, seeded};
use svbrdf_core::MaterialMaps;

use crate::crop::{apply_crop, CropSpec};
use crate::error::io_err;
use crate::mix::{mix_with, MixRecipe};
use crate::roughness::{blend_roughness, RoughnessBlend};
use crate::source::SourceSet;
use crate::{Error, Result};

const TAG_MANIFEST: u64 = 0x4d41_4e49;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub seed: u64,
    /// Procedural sources generated when no source directory is given.
    pub procedural_sources: usize,
    pub procedural_resolution: usize,
    pub crops_per_source: usize,
    pub crop_min: usize,
    pub crop_max: usize,
    pub crop_resolution: usize,
    /// Basis crops whose roughness is blended with a procedural map.
    pub roughness_blends: usize,
    pub mixtures: usize,
    pub three_source_fraction: f64,
    /// Side of the window each mixture takes from its basis exemplars.
    pub mixture_crop: usize,
    /// Fraction of sources held out for testing.
    pub test_fraction: f64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ForgeConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            procedural_sources: 32,
            procedural_resolution: 128,
            crops_per_source: 16,
            crop_min: 48,
            crop_max: 96,
            crop_resolution: 48,
            roughness_blends: 96,
            mixtures: 96,
            three_source_fraction: 0.34,
            mixture_crop: 32,
            test_fraction: 0.125,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            procedural_sources: 0,
            procedural_resolution: 2048,
            crop_min: 512,
            crop_max: 1400,
            crop_resolution: 512,
            roughness_blends: 6000,
            mixtures: 83_065,
            mixture_crop: 288,
            test_fraction: 0.0,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::full_scale()),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Mixtures with three sources; the rest use two.
    pub fn three_source_mixtures(&self) -> usize {
        (self.three_source_fraction * self.mixtures as f64).round() as usize
    }

    /// Distinct basis exemplars consumed by the mixtures.
    pub fn mixture_inputs(&self) -> usize {
        let three = self.three_source_mixtures();
        3 * three + 2 * (self.mixtures - three)
    }

    pub fn test_sources(&self, sources: usize) -> usize {
        let n = (self.test_fraction * sources as f64).round() as usize;
        n.min(sources.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.crops_per_source == 0 || self.crop_resolution == 0 {
            return bad("crop count and resolution must be positive".into());
        }
        if self.crop_min == 0 || self.crop_min > self.crop_max {
            return bad(format!("crop size range [{}, {}] is empty", self.crop_min, self.crop_max));
        }
        if !(0.0..=1.0).contains(&self.three_source_fraction) || !(0.0..1.0).contains(&self.test_fraction) {
            return bad("fractions must lie in [0, 1)".into());
        }
        if self.mixtures > 0 && (self.mixture_crop == 0 || self.mixture_crop > self.crop_resolution) {
            return bad(format!(
                "mixture window {} must fit the {}px basis exemplars",
                self.mixture_crop, self.crop_resolution
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Crop {
        source: String,
        crop: CropSpec,
    },
    RoughnessBlend {
        source: String,
        crop: CropSpec,
        blend: RoughnessBlend,
    },
    Mixture(MixRecipe),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRecord {
    pub id: String,
    /// Output directory relative to the corpus root.
    pub path: String,
    pub split: Split,
    pub resolution: usize,
    pub provenance: Provenance,
}

impl ExemplarRecord {
    pub fn is_mixture(&self) -> bool {
        matches!(self.provenance, Provenance::Mixture(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: ForgeConfig,
    sources: Vec<String>,
    test_sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub config: ForgeConfig,
    pub sources: Vec<String>,
    pub test_sources: Vec<String>,
    pub records: Vec<ExemplarRecord>,
}

/// Draws every crop, blend and mixture of the corpus from `cfg.seed`.
pub fn build_manifest(sources: &SourceSet, cfg: &ForgeConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Config("no source materials".into()));
    }
    let mut rng = seeded(mix_seed(&[cfg.seed, TAG_MANIFEST]));

    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(&mut rng);
    let mut test_idx: Vec<usize> = order[..cfg.test_sources(sources.len())].to_vec();
    test_idx.sort_unstable();
    let test_sources: Vec<String> = test_idx.iter().map(|&i| sources.ids[i].clone()).collect();

    let mut records = Vec::new();
    for (i, (id, m)) in sources.ids.iter().zip(&sources.materials).enumerate() {
        let split = if test_idx.binary_search(&i).is_ok() { Split::Test } else { Split::Train };
        let max = cfg.crop_max.min(m.resolution());
        for _ in 0..cfg.crops_per_source {
            let crop = CropSpec::random(m.resolution(), cfg.crop_min, max, &mut rng)?;
            let n = records.len();
            records.push(ExemplarRecord {
                id: format!("basis-{n:06}"),
                path: format!("basis/{n:06}"),
                split,
                resolution: cfg.crop_resolution,
                provenance: Provenance::Crop {
                    source: id.clone(),
                    crop,
                },
            });
        }
    }

    let train: Vec<usize> = (0..records.len()).filter(|&i| records[i].split == Split::Train).collect();
    if cfg.roughness_blends > train.len() {
        return Err(Error::Capacity {
            requested: cfg.roughness_blends,
            needed: cfg.roughness_blends,
            available: train.len(),
        });
    }
    let mut picks = train.clone();
    picks.shuffle(&mut rng);
    let mut picks = picks[..cfg.roughness_blends].to_vec();
    picks.sort_unstable();
    for i in picks {
        let blend = RoughnessBlend::random(&mut rng);
        if let Provenance::Crop { source, crop } = records[i].provenance.clone() {
            records[i].provenance = Provenance::RoughnessBlend { source, crop, blend };
        }
    }

    let needed = cfg.mixture_inputs();
    if needed > train.len() {
        return Err(Error::Capacity {
            requested: cfg.mixtures,
            needed,
            available: train.len(),
        });
    }
    let mut pool = train;
    pool.shuffle(&mut rng);
    let three = cfg.three_source_mixtures();
    let mut sizes: Vec<usize> = std::iter::repeat_n(2, cfg.mixtures - three).chain(std::iter::repeat_n(3, three)).collect();
    sizes.shuffle(&mut rng);
    let mut next = pool.into_iter();
    for (j, k) in sizes.into_iter().enumerate() {
        let members: Vec<usize> = next.by_ref().take(k).collect();
        let span = cfg.crop_resolution - cfg.mixture_crop;
        let crops = members
            .iter()
            .map(|_| CropSpec::axis_aligned(rng.random_range(0..=span), rng.random_range(0..=span), cfg.mixture_crop))
            .collect();
        records.push(ExemplarRecord {
            id: format!("mix-{j:06}"),
            path: format!("mix/{j:06}"),
            split: Split::Train,
            resolution: cfg.mixture_crop,
            provenance: Provenance::Mixture(MixRecipe {
                sources: members.iter().map(|&i| records[i].id.clone()).collect(),
                crops,
                net_seed: rng.random(),
            }),
        });
    }

    Ok(DatasetManifest {
        config: cfg.clone(),
        sources: sources.ids.clone(),
        test_sources,
        records,
    })
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn record(&self, id: &str) -> Option<&ExemplarRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Header line followed by one JSON record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            kind: "header".into(),
            config: self.config.clone(),
            sources: self.sources.clone(),
            test_sources: self.test_sources.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(lines.next().ok_or_else(|| Error::Config("empty manifest".into()))?)?;
        if header.kind != "header" {
            return Err(Error::Config("manifest must start with a header line".into()));
        }
        let records = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            config: header.config,
            sources: header.sources,
            test_sources: header.test_sources,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Rebuilds the material of one record from the sources.
    pub fn materialize(&self, sources: &SourceSet, record: &ExemplarRecord) -> Result<MaterialMaps<f64>> {
        let source = |id: &str| sources.get(id).ok_or_else(|| Error::UnknownId(id.to_string()));
        match &record.provenance {
            Provenance::Crop { source: id, crop } => apply_crop(source(id)?, crop, record.resolution),
            Provenance::RoughnessBlend { source: id, crop, blend } => {
                blend_roughness(&apply_crop(source(id)?, crop, record.resolution)?, blend)
            }
            Provenance::Mixture(recipe) => {
                let parts = recipe
                    .sources
                    .iter()
                    .zip(&recipe.crops)
                    .map(|(id, crop)| {
                        let basis = self.record(id).filter(|r| !r.is_mixture()).ok_or_else(|| Error::UnknownId(id.clone()))?;
                        apply_crop(&self.materialize(sources, basis)?, crop, record.resolution)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(mix_with(&parts, recipe.net_seed)?.0)
            }
        }
    }

    /// Writes `manifest.jsonl` and every material under `root`. Returns the
    /// number of materials written.
    pub fn materialize_all(&self, sources: &SourceSet, root: &Path) -> Result<usize> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        self.write(&root.join("manifest.jsonl"))?;
        for r in &self.records {
            save_material(&self.materialize(sources, r)?, &root.join(&r.path))?;
        }
        Ok(self.records.len())
    }
}

/// Centred axis-aligned crop to `res` (no resampling).
pub fn center_crop(m: &MaterialMaps<f64>, res: usize) -> Result<MaterialMaps<f64>> {
    if res > m.resolution() {
        return Err(Error::SourceTooSmall {
            resolution: m.resolution(),
            size: res,
        });
    }
    let o = (m.resolution() - res) / 2;
    apply_crop(m, &CropSpec::axis_aligned(o, o, res), res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ForgeConfig {
        ForgeConfig {
            procedural_sources: 8,
            procedural_resolution: 32,
            crops_per_source: 4,
            crop_min: 12,
            crop_max: 24,
            crop_resolution: 12,
            roughness_blends: 5,
            mixtures: 6,
            mixture_crop: 8,
            test_fraction: 0.25,
            ..ForgeConfig::desk()
        }
    }

    #[test]
    fn counts_follow_config() {
        let cfg = small();
        let src = SourceSet::procedural(cfg.procedural_sources, cfg.procedural_resolution, 1).unwrap();
        let m = build_manifest(&src, &cfg).unwrap();
        assert_eq!(m.test_sources.len(), 2);
        assert_eq!(m.count(Split::Test), 2 * 4);
        assert_eq!(m.count(Split::Train), 6 * 4 + 6);
        let blends = m.records.iter().filter(|r| matches!(r.provenance, Provenance::RoughnessBlend { .. })).count();
        assert_eq!(blends, 5);
        assert_eq!(cfg.three_source_mixtures(), 2);
    }

    #[test]
    fn capacity_error() {
        let cfg = ForgeConfig { mixtures: 20, ..small() };
        let src = SourceSet::procedural(8, 32, 1).unwrap();
        assert!(matches!(build_manifest(&src, &cfg), Err(Error::Capacity { .. })));
    }

    #[test]
    fn jsonl_round_trip_and_toml() {
        let cfg = small();
        let src = SourceSet::procedural(8, 32, 1).unwrap();
        let m = build_manifest(&src, &cfg).unwrap();
        let text = m.to_jsonl().unwrap();
        assert_eq!(DatasetManifest::from_jsonl(&text).unwrap(), m);
        let parsed = ForgeConfig::from_toml("mixtures = 4\nseed = 9\n").unwrap();
        assert_eq!(parsed.mixtures, 4);
        assert_eq!(parsed.crop_resolution, ForgeConfig::desk().crop_resolution);
        assert!(ForgeConfig::from_toml("nonsense = 1").is_err());
    }
}

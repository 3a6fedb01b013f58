//! Pipeline configuration: a profile plus optional TOML overrides.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use svbrdf_diffusion::{NetConfig, TrainConfig, Variant};
use svbrdf_forge::ForgeConfig;

use crate::metrics::{DEFAULT_LIGHT_COUNT, DEFAULT_LIGHT_RADIUS};
use crate::replicates::DEFAULT_SEED_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    #[serde(rename = "paper")]
    #[value(name = "paper")]
    FullScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSettings {
    pub steps: usize,
    pub guidance_scale: f64,
    pub eta: f64,
    pub seeds: usize,
    /// Use the EMA weights of a run directory rather than the raw ones.
    pub use_ema: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub lights: usize,
    pub radius: f64,
    pub preview_lights: usize,
    pub tile: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub forge: ForgeConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub sample: SampleSettings,
    pub eval: EvalSettings,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        let (forge, net, train) = match profile {
            Profile::Desk => (ForgeConfig::desk(), NetConfig::desk(), TrainConfig::desk()),
            Profile::FullScale => (ForgeConfig::full_scale(), NetConfig::full_scale(), TrainConfig::full_scale()),
        };
        let finetune = TrainConfig {
            epochs: match profile {
                Profile::Desk => train.epochs,
                Profile::FullScale => 19,
            },
            ..train.clone().with_variant(Variant::Colocated)
        };
        Self {
            profile,
            forge,
            net,
            train,
            finetune,
            sample: SampleSettings {
                steps: 20,
                guidance_scale: 1.0,
                eta: 1.0,
                seeds: DEFAULT_SEED_COUNT,
                use_ema: true,
            },
            eval: EvalSettings {
                lights: DEFAULT_LIGHT_COUNT,
                radius: DEFAULT_LIGHT_RADIUS,
                preview_lights: 3,
                tile: 64,
            },
        }
    }

    /// Profile defaults with the tables of a TOML document merged on top.
    pub fn from_toml(profile: Profile, text: &str) -> Result<Self> {
        let mut base = toml::Value::try_from(Self::profile(profile))?;
        let over: toml::Value = toml::from_str(text).context("parsing configuration")?;
        merge(&mut base, over);
        Ok(base.try_into().context("invalid configuration")?)
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::profile(profile)),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(profile, &text)
            }
        }
    }

    /// Applies a top-level seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.forge.seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
        self
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_merge_into_profile() {
        let c = PipelineConfig::from_toml(Profile::Desk, "[train]\nlr = 0.5\n[forge]\nmixtures = 3\n").unwrap();
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.train.batch_size, TrainConfig::desk().batch_size);
        assert_eq!(c.forge.mixtures, 3);
        assert!(PipelineConfig::from_toml(Profile::Desk, "[train]\nbogus = 1\n").is_err());
        let p = PipelineConfig::profile(Profile::FullScale);
        assert_eq!(p.net.time_dim, 512);
        assert_eq!(p.train.lr, 2e-5);
        assert_eq!(p.eval.lights, 128);
    }
}

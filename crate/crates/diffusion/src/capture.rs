//! Capture variants and the lighting used to synthesize their condition
//! photographs.

use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use svbrdf_core::shading::{
    flash_log_ratio_range, render_colocated, render_env_from, sample_camera_distance, synth_flash_noflash,
};
use svbrdf_core::{rng, CameraModel, EnvironmentMap, Image, MaterialMaps, Vec3};

use crate::condition::ConditionStack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Backbone,
    Colocated,
    Natural,
    FlashNoflash,
}

impl Variant {
    /// Condition channels `k` fed to the network.
    pub fn cond_channels(self) -> usize {
        match self {
            Variant::Backbone => 0,
            Variant::Colocated => 6,
            Variant::Natural => 3,
            Variant::FlashNoflash => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Backbone => "backbone",
            Variant::Colocated => "colocated",
            Variant::Natural => "natural",
            Variant::FlashNoflash => "flash-noflash",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(Variant::Backbone),
            "colocated" => Ok(Variant::Colocated),
            "natural" => Ok(Variant::Natural),
            "flash-noflash" => Ok(Variant::FlashNoflash),
            other => Err(Error::Config(format!(
                "unknown variant {other} (expected backbone, colocated, natural or flash-noflash)"
            ))),
        }
    }
}

/// Lighting parameters of one condition rendering. Storing them makes the
/// capture reproducible, which render-error selection relies on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CaptureLighting {
    Colocated {
        distance: f64,
    },
    Natural {
        env: usize,
        rotation: f64,
        render_seed: u64,
    },
    FlashNoflash {
        env: usize,
        rotation: f64,
        log_ratio: f64,
        render_seed: u64,
    },
}

impl CaptureLighting {
    pub fn variant(&self) -> Variant {
        match self {
            CaptureLighting::Colocated { .. } => Variant::Colocated,
            CaptureLighting::Natural { .. } => Variant::Natural,
            CaptureLighting::FlashNoflash { .. } => Variant::FlashNoflash,
        }
    }
}

/// Environment maps and Monte-Carlo budget for condition rendering.
#[derive(Debug, Clone)]
pub struct Lighting {
    pub envs: Vec<EnvironmentMap<f64>>,
    pub spp: usize,
}

impl Lighting {
    /// `count` procedural skies derived from `seed`.
    pub fn procedural(count: usize, seed: u64, spp: usize) -> Self {
        let envs = (0..count as u64)
            .map(|i| procedural_sky(&mut rng::stream(seed, i), 64, 32))
            .collect();
        Self { envs, spp }
    }

    /// Every `.hdr` / `.exr` file in `dir`, in name order.
    pub fn from_dir(dir: &Path, spp: usize) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(crate::error::io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("hdr" | "exr")))
            .collect();
        paths.sort();
        let envs = paths
            .iter()
            .map(|p| Ok(EnvironmentMap::new(svbrdf_core::io::read_hdr(p)?, 0.0)?))
            .collect::<Result<Vec<_>>>()?;
        if envs.is_empty() {
            return Err(Error::Config(format!("no environment maps in {}", dir.display())));
        }
        Ok(Self { envs, spp })
    }

    /// Draws lighting for `variant`.
    pub fn draw(&self, variant: Variant, rng: &mut impl RngCore) -> Result<CaptureLighting> {
        let (lo, hi) = flash_log_ratio_range();
        let two_pi = std::f64::consts::TAU;
        match variant {
            Variant::Backbone => Err(Error::Config("the backbone has no capture lighting".into())),
            Variant::Colocated => Ok(CaptureLighting::Colocated {
                distance: sample_camera_distance::<f64>(rng).max(1e-3),
            }),
            Variant::Natural => Ok(CaptureLighting::Natural {
                env: self.pick_env(rng)?,
                rotation: rng.random_range(0.0..two_pi),
                render_seed: rng.next_u64(),
            }),
            Variant::FlashNoflash => Ok(CaptureLighting::FlashNoflash {
                env: self.pick_env(rng)?,
                rotation: rng.random_range(0.0..two_pi),
                log_ratio: rng.random_range(lo..=hi),
                render_seed: rng.next_u64(),
            }),
        }
    }

    fn pick_env(&self, rng: &mut impl RngCore) -> Result<usize> {
        if self.envs.is_empty() {
            return Err(Error::Config("no environment maps available".into()));
        }
        Ok(rng.random_range(0..self.envs.len()))
    }

    fn env(&self, index: usize, rotation: f64) -> Result<EnvironmentMap<f64>> {
        let env = self
            .envs
            .get(index)
            .ok_or_else(|| Error::Config(format!("environment map {index} not loaded")))?;
        Ok(env.clone().with_rotation(rotation))
    }

    /// Condition photographs of `m` under `lighting`.
    pub fn render(&self, m: &MaterialMaps<f64>, lighting: &CaptureLighting) -> Result<ConditionStack<f64>> {
        match *lighting {
            CaptureLighting::Colocated { distance } => {
                let (photo, view) = render_colocated(m, distance)?;
                ConditionStack::new(vec![photo], Some(view))
            }
            CaptureLighting::Natural {
                env,
                rotation,
                render_seed,
            } => {
                let env = self.env(env, rotation)?;
                let photo = render_env_from(m, &env, &CameraModel::default(), self.spp, &mut rng::seeded(render_seed))?;
                ConditionStack::new(vec![photo], None)
            }
            CaptureLighting::FlashNoflash {
                env,
                rotation,
                log_ratio,
                render_seed,
            } => {
                let env = self.env(env, rotation)?;
                let pair = synth_flash_noflash(
                    m,
                    &env,
                    &CameraModel::default(),
                    log_ratio,
                    self.spp,
                    &mut rng::seeded(render_seed),
                )?;
                ConditionStack::new(vec![pair.flash, pair.no_flash], None)
            }
        }
    }
}

/// Equirectangular sky: an elevation gradient, a soft sun lobe and a dim
/// ground below the horizon.
pub fn procedural_sky(rng: &mut impl RngCore, width: usize, height: usize) -> EnvironmentMap<f64> {
    let sun_elev: f64 = rng.random_range(0.15..1.2);
    let sun_azim: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let sun_dir = Vec3::new(sun_elev.cos() * sun_azim.cos(), sun_elev.cos() * sun_azim.sin(), sun_elev.sin());
    let sun_strength: f64 = rng.random_range(2.0..8.0);
    let sun_width: f64 = rng.random_range(0.08..0.25);
    let warm: f64 = rng.random_range(0.0..0.3);
    let zenith = Vec3::new(0.25 - 0.1 * warm, 0.4, 0.8 - 0.2 * warm);
    let horizon = Vec3::new(0.8 + 0.2 * warm, 0.8, 0.85 - 0.3 * warm);
    let ground = Vec3::new(0.12, 0.1, 0.08);
    let image = Image::from_fn(width, height, 3, |row, col, px| {
        let theta = (row as f64 + 0.5) / height as f64 * std::f64::consts::PI;
        let phi = (col as f64 + 0.5) / width as f64 * std::f64::consts::TAU;
        let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
        let base = if dir.z > 0.0 {
            let s = dir.z.sqrt();
            zenith * s + horizon * (1.0 - s)
        } else {
            ground
        };
        let ang = dir.dot(sun_dir).clamp(-1.0, 1.0).acos();
        let sun = sun_strength * (-(ang * ang) / (2.0 * sun_width * sun_width)).exp();
        let sun_tint = Vec3::new(1.0, 0.95 - 0.2 * warm, 0.9 - 0.3 * warm);
        px.copy_from_slice(&(base + sun_tint * sun).to_array());
    });
    EnvironmentMap::new(image, 0.0).expect("procedural sky is finite and non-negative")
}

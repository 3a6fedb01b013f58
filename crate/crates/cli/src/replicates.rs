//! Seed replicates of a conditional sample and their selection.

use anyhow::{bail, ensure, Result};
use svbrdf_core::{decode_material, LatentImage, MaterialMaps, LATENT_CHANNELS};
use svbrdf_diffusion::{sample_eulera, CaptureLighting, ConditionStack, Denoiser, Lighting, NoiseSchedule, SamplerConfig};

use crate::metrics::proxy_perceptual_error;

pub const DEFAULT_SEED_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub seed: u64,
    pub material: MaterialMaps<f64>,
    /// Photographs re-rendered under the capture lighting, once scored.
    pub render: Option<ConditionStack<f64>>,
    pub score: Option<f64>,
}

/// One replicate per seed, ordered by seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    pub condition: ConditionStack<f64>,
    pub entries: Vec<Replicate>,
}

impl ReplicateSet {
    pub fn seeds(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.seed).collect()
    }

    pub fn get(&self, seed: u64) -> Option<&Replicate> {
        self.entries.iter().find(|e| e.seed == seed)
    }
}

/// Samples one material per seed with the conditional model.
pub fn generate_replicates(
    model: &Denoiser<f32>,
    condition: &ConditionStack<f64>,
    seeds: &[u64],
    sampler: &SamplerConfig,
) -> Result<ReplicateSet> {
    let k = model.config().cond_channels;
    ensure!(
        k == condition.channels(),
        "model expects {k} condition channels but the capture provides {}",
        condition.channels()
    );
    ensure!(!seeds.is_empty(), "no seeds requested");
    let res = condition.resolution();
    let cond: Vec<f32> = condition.cast::<f32>().to_planar();
    let schedule = NoiseSchedule::default();
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let entries = sorted
        .into_iter()
        .map(|seed| {
            let cfg = SamplerConfig { seed, ..*sampler };
            let x = sample_eulera(model, &schedule, Some(&cond), LATENT_CHANNELS * res * res, &cfg)?;
            let latent = LatentImage::from_planar(res, &x.iter().map(|&v| v as f64).collect::<Vec<_>>())?;
            Ok(Replicate {
                seed,
                material: decode_material(&latent)?,
                render: None,
                score: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateSet {
        condition: condition.clone(),
        entries,
    })
}

/// Index of the smallest score; ties keep the earliest entry.
pub fn select_by_scores(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Error between two condition stacks: mean proxy error over photographs.
pub fn capture_error(a: &ConditionStack<f64>, b: &ConditionStack<f64>) -> Result<f64> {
    ensure!(a.photos.len() == b.photos.len(), "photograph counts differ");
    let mut sum = 0.0;
    for (x, y) in a.photos.iter().zip(&b.photos) {
        sum += proxy_perceptual_error(x, y)?;
    }
    Ok(sum / a.photos.len() as f64)
}

/// Re-renders every replicate under the capture lighting and returns the
/// seed whose rendering is closest to the input photographs (ties go to
/// the lowest seed) together with all scores in seed order.
pub fn select_by_render_error(
    rs: &mut ReplicateSet,
    capture: Option<&CaptureLighting>,
    lighting: &Lighting,
) -> Result<(u64, Vec<f64>)> {
    let Some(capture) = capture else {
        bail!("the capture lighting is unknown; pick a fixed seed with --pick or choose from a contact sheet");
    };
    ensure!(!rs.entries.is_empty(), "replicate set is empty");
    let mut scores = Vec::with_capacity(rs.entries.len());
    for e in &mut rs.entries {
        let render = lighting.render(&e.material, capture)?;
        let score = capture_error(&render, &rs.condition)?;
        ensure!(score.is_finite(), "non-finite render error for seed {}", e.seed);
        e.render = Some(render);
        e.score = Some(score);
        scores.push(score);
    }
    let best = select_by_scores(&scores).expect("non-empty");
    Ok((rs.entries[best].seed, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_and_ties() {
        assert_eq!(select_by_scores(&[0.3, 0.1, 0.2]), Some(1));
        assert_eq!(select_by_scores(&[0.2, 0.1, 0.1]), Some(1));
        assert_eq!(select_by_scores(&[]), None);
        let scaled: Vec<f64> = [0.3, 0.1, 0.2].iter().map(|v| v * 7.5).collect();
        assert_eq!(select_by_scores(&scaled), Some(1));
    }
}

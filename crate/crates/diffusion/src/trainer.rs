//! Backbone pretraining and conditional finetuning.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use svbrdf_core::rng::{mix_seed, seeded, stream};
use svbrdf_core::{encode_material, MaterialMaps, LATENT_CHANNELS};

use crate::capture::{Lighting, Variant};
use crate::checkpoint;
use crate::error::{io_err, Error, Result};
use crate::nn::{Grads, ParamStore, Shape, Tape};
use crate::objective::{make_training_pair, pair_with_noise, standard_normal, velocity_loss_grad};
use crate::optim::{warmup_lr, AdamW, AdamWConfig, Ema};
use crate::schedule::NoiseSchedule;
use crate::unet::{Denoiser, NetConfig};

const TAG_PERMUTATION: u64 = 0x5045_524d;
const TAG_STEP: u64 = 0x5354_4550;
const TAG_CONDITION: u64 = 0x434f_4e44;
const TAG_EVAL: u64 = 0x4556_414c;
const TAG_ENV: u64 = 0x454e_5653;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub warmup: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the number of optimizer steps regardless of `epochs`.
    pub max_steps: Option<usize>,
    pub weight_decay: f64,
    pub ema_decay: f64,
    /// Ramps the EMA decay as `min(decay, (1 + s) / (10 + s))`.
    pub ema_warmup: bool,
    pub seed: u64,
    /// Steps between state checkpoints in a run directory (0: final only).
    pub checkpoint_every: usize,
    /// Steps between fixed-batch evaluations (0: never).
    pub eval_every: usize,
    pub eval_items: usize,
    pub eval_timesteps: usize,
    pub spp: usize,
    pub env_count: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            variant: Variant::Backbone,
            lr: 1e-3,
            warmup: 100,
            batch_size: 4,
            epochs: 1000,
            max_steps: None,
            weight_decay: 0.01,
            ema_decay: 0.999,
            ema_warmup: true,
            seed: 0,
            checkpoint_every: 500,
            eval_every: 50,
            eval_items: 8,
            eval_timesteps: 4,
            spp: 16,
            env_count: 8,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            lr: 2e-5,
            warmup: 100_000,
            batch_size: 32,
            epochs: 50,
            checkpoint_every: 10_000,
            eval_every: 1000,
            eval_items: 32,
            spp: 64,
            env_count: 64,
            ..Self::desk()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.max_steps = Some(steps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return bad("learning rate, batch size and epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || self.weight_decay < 0.0 {
            return bad("EMA decay must lie in [0, 1] and weight decay be non-negative");
        }
        if self.variant != Variant::Backbone && (self.spp == 0 || self.env_count == 0) {
            return bad("conditional training needs spp and env_count of at least 1");
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, items: usize) -> usize {
        items.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, items: usize) -> usize {
        let by_epochs = self.epochs * self.batches_per_epoch(items);
        self.max_steps.map_or(by_epochs, |m| m.min(by_epochs))
    }

    pub fn lighting(&self) -> Lighting {
        Lighting::procedural(self.env_count, mix_seed(&[self.seed, TAG_ENV]), self.spp)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One noisy example with fixed timestep, noise and condition.
#[derive(Debug, Clone)]
pub struct FixedItem {
    pub y: Vec<f32>,
    pub v_target: Vec<f32>,
    pub t: usize,
    pub cond: Option<Vec<f32>>,
}

/// A frozen evaluation batch, so loss curves are comparable across steps
/// and across runs.
#[derive(Debug, Clone)]
pub struct FixedBatch {
    pub items: Vec<FixedItem>,
}

impl FixedBatch {
    /// `items` materials at `timesteps` evenly spread noise levels each.
    pub fn new(
        materials: &[MaterialMaps<f64>],
        variant: Variant,
        lighting: &Lighting,
        schedule: &NoiseSchedule,
        items: usize,
        timesteps: usize,
        seed: u64,
    ) -> Result<Self> {
        let big_t = schedule.len();
        let mut out = Vec::new();
        for (i, m) in materials.iter().take(items).enumerate() {
            let x: Vec<f32> = encode_material(&m.cast::<f32>())?.image().to_planar();
            let cond = if variant == Variant::Backbone {
                None
            } else {
                let l = lighting.draw(variant, &mut stream(mix_seed(&[seed, TAG_EVAL, TAG_CONDITION]), i as u64))?;
                Some(lighting.render(m, &l)?.cast::<f32>().to_planar())
            };
            for j in 0..timesteps {
                let t = 1 + ((big_t - 1) as f64 * (j as f64 + 0.5) / timesteps as f64).round() as usize;
                let noise = standard_normal(x.len(), &mut stream(mix_seed(&[seed, TAG_EVAL]), (i * timesteps + j) as u64));
                let p = pair_with_noise(&x, noise, schedule.a(t), schedule.b(t));
                out.push(FixedItem {
                    y: p.y,
                    v_target: p.v_target,
                    t,
                    cond: cond.clone(),
                });
            }
        }
        if out.is_empty() {
            return Err(Error::Config("evaluation batch is empty".into()));
        }
        Ok(Self { items: out })
    }

    /// Mean squared velocity error. Conditions are ignored by an
    /// unconditional model.
    pub fn loss(&self, model: &Denoiser<f32>) -> Result<f64> {
        let conditional = model.config().cond_channels > 0;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for item in &self.items {
            let cond = if conditional { item.cond.as_deref() } else { None };
            let v = model.forward(&item.y, item.t, cond)?;
            sum += v
                .iter()
                .zip(&item.v_target)
                .map(|(&p, &q)| {
                    let d = (p - q) as f64;
                    d * d
                })
                .sum::<f64>();
            count += v.len();
        }
        Ok(sum / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Fixed-batch loss of the weights *before* this step's update.
    pub eval_loss: Option<f64>,
}

/// Training state for one run.
pub struct Trainer {
    cfg: TrainConfig,
    schedule: NoiseSchedule,
    model: Denoiser<f32>,
    opt: AdamW<f32>,
    ema: Ema<f32>,
    step: usize,
    materials: Vec<MaterialMaps<f64>>,
    latents: Vec<Vec<f32>>,
    lighting: Lighting,
    cond_epoch: Option<usize>,
    conds: Vec<Vec<f32>>,
    eval: Option<FixedBatch>,
    history: Vec<LossRecord>,
}

impl Trainer {
    /// Starts a run from `model`, whose condition channels must match the
    /// variant.
    pub fn new(cfg: TrainConfig, model: Denoiser<f32>, materials: Vec<MaterialMaps<f64>>) -> Result<Self> {
        cfg.validate()?;
        if materials.is_empty() {
            return Err(Error::Config("no training materials".into()));
        }
        if model.config().cond_channels != cfg.variant.cond_channels() {
            return Err(Error::Config(format!(
                "model has {} condition channels, variant {} needs {}",
                model.config().cond_channels,
                cfg.variant.name(),
                cfg.variant.cond_channels()
            )));
        }
        let res = materials[0].resolution();
        if materials.iter().any(|m| m.resolution() != res) {
            return Err(Error::Config("training materials differ in resolution".into()));
        }
        model.latent_resolution(res * res * LATENT_CHANNELS)?;
        let latents = materials
            .iter()
            .map(|m| Ok(encode_material(&m.cast::<f32>())?.image().to_planar()))
            .collect::<Result<Vec<_>>>()?;
        let schedule = NoiseSchedule::default();
        let lighting = cfg.lighting();
        let eval = if cfg.eval_every > 0 && cfg.eval_items > 0 && cfg.eval_timesteps > 0 {
            Some(FixedBatch::new(
                &materials,
                cfg.variant,
                &lighting,
                &schedule,
                cfg.eval_items,
                cfg.eval_timesteps,
                cfg.seed,
            )?)
        } else {
            None
        };
        let opt = AdamW::new(
            model.params(),
            AdamWConfig {
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
        );
        let ema = Ema::new(model.params(), cfg.ema_decay);
        Ok(Self {
            cfg,
            schedule,
            model,
            opt,
            ema,
            step: 0,
            materials,
            latents,
            lighting,
            cond_epoch: None,
            conds: Vec::new(),
            eval,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn model(&self) -> &Denoiser<f32> {
        &self.model
    }

    /// EMA weights as a model.
    pub fn ema_model(&self) -> Denoiser<f32> {
        Denoiser::from_parts(self.model.config().clone(), self.ema.weights().clone()).expect("EMA shares the model layout")
    }

    /// Changes the step budget, e.g. to extend a resumed run.
    pub fn set_max_steps(&mut self, max_steps: Option<usize>) {
        self.cfg.max_steps = max_steps;
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn eval_batch(&self) -> Option<&FixedBatch> {
        self.eval.as_ref()
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.total_steps(self.materials.len())
    }

    /// Materials in the batch of `step`, and its epoch.
    pub fn batch_items(&self, step: usize) -> (usize, Vec<usize>) {
        let n = self.materials.len();
        let per_epoch = self.cfg.batches_per_epoch(n);
        let (epoch, j) = (step / per_epoch, step % per_epoch);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut r = stream(mix_seed(&[self.cfg.seed, TAG_PERMUTATION]), epoch as u64);
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let lo = j * self.cfg.batch_size;
        let hi = (lo + self.cfg.batch_size).min(n);
        (epoch, perm[lo..hi].to_vec())
    }

    fn ensure_conditions(&mut self, epoch: usize) -> Result<()> {
        if self.cfg.variant == Variant::Backbone || self.cond_epoch == Some(epoch) {
            return Ok(());
        }
        let seed = mix_seed(&[self.cfg.seed, TAG_CONDITION, epoch as u64]);
        self.conds = self
            .materials
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let l = self.lighting.draw(self.cfg.variant, &mut stream(seed, i as u64))?;
                Ok(self.lighting.render(m, &l)?.cast::<f32>().to_planar())
            })
            .collect::<Result<Vec<_>>>()?;
        self.cond_epoch = Some(epoch);
        Ok(())
    }

    pub fn eval_loss(&self) -> Result<Option<f64>> {
        self.eval.as_ref().map(|b| b.loss(&self.model)).transpose()
    }

    /// One optimizer update; returns the batch loss.
    pub fn step(&mut self) -> Result<LossRecord> {
        let eval_loss = match self.cfg.eval_every {
            0 => None,
            every if self.step % every == 0 => self.eval_loss()?,
            _ => None,
        };
        let (epoch, items) = self.batch_items(self.step);
        self.ensure_conditions(epoch)?;
        let res = self.materials[0].resolution();
        let shape = Shape::new(LATENT_CHANNELS, res, res);
        let k = self.cfg.variant.cond_channels();
        let count = items.len() * shape.len();
        let mut rng = seeded(mix_seed(&[self.cfg.seed, TAG_STEP, self.step as u64]));
        let mut grads = Grads::zeros_like(self.model.params());
        let mut sum = 0.0f64;
        let mut timesteps = Vec::with_capacity(items.len());
        for &i in &items {
            let t = rng.random_range(1..=self.schedule.len());
            timesteps.push(t);
            let pair = make_training_pair(&self.latents[i], t, &self.schedule, &mut rng);
            let mut tape = Tape::new(self.model.params());
            let y = tape.constant(pair.y, shape);
            let c = (k > 0).then(|| tape.constant(self.conds[i].clone(), Shape::new(k, res, res)));
            let out = self.model.forward_on(&mut tape, y, t, c)?;
            let v = tape.value(out);
            sum += v
                .iter()
                .zip(&pair.v_target)
                .map(|(&p, &q)| {
                    let d = (p - q) as f64;
                    d * d
                })
                .sum::<f64>();
            let dout = velocity_loss_grad(v, &pair.v_target, count);
            tape.backward(out, dout, &mut grads);
        }
        let loss = sum / count as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                items,
                timesteps,
            });
        }
        let lr = warmup_lr(self.cfg.lr, self.step, self.cfg.warmup);
        self.opt.step(self.model.params_mut(), &grads, lr);
        if let Some(name) = self.model.params().first_non_finite() {
            return Err(Error::Config(format!("parameter {name} became non-finite at step {}", self.step)));
        }
        self.ema.decay = self.ema_decay_at(self.step);
        self.ema.update(self.model.params());
        let record = LossRecord {
            step: self.step,
            lr,
            train_loss: loss,
            eval_loss,
        };
        self.history.push(record);
        self.step += 1;
        Ok(record)
    }

    fn ema_decay_at(&self, step: usize) -> f64 {
        if self.cfg.ema_warmup {
            let ramp = (1.0 + step as f64) / (10.0 + step as f64);
            self.cfg.ema_decay.min(ramp)
        } else {
            self.cfg.ema_decay
        }
    }

    /// Runs until `self.total_steps()` (or `until`, if smaller), writing to
    /// `dir` when given.
    pub fn run(&mut self, until: Option<usize>, dir: Option<&RunDir>) -> Result<()> {
        let end = until.map_or(self.total_steps(), |u| u.min(self.total_steps()));
        while self.step < end {
            let rec = self.step()?;
            if let Some(dir) = dir {
                dir.append_loss(&rec)?;
                if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                    dir.save_state(self)?;
                }
            }
            if rec.step % 100 == 0 {
                log::info!("step {} lr {:.3e} loss {:.5}", rec.step, rec.lr, rec.train_loss);
            }
        }
        if let Some(dir) = dir {
            dir.save_state(self)?;
            dir.save_models(self)?;
        }
        Ok(())
    }

    fn state_tensors(&self) -> ParamStore<f32> {
        let mut all = ParamStore::new();
        let (m, v) = self.opt.moments();
        for (prefix, store) in [("model/", self.model.params()), ("ema/", self.ema.weights()), ("adam.m/", m), ("adam.v/", v)] {
            for (name, shape, values) in store.iter() {
                all.insert(format!("{prefix}{name}"), shape, values.to_vec());
            }
        }
        all
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "train-state",
            "step": self.step,
            "adam_steps": self.opt.steps(),
            "train": self.cfg,
        });
        checkpoint::write(path, self.model.config(), meta, &self.state_tensors())
    }

    /// Restores a run from a state checkpoint written by [`Trainer::save_state`].
    pub fn resume(path: &Path, materials: Vec<MaterialMaps<f64>>) -> Result<Self> {
        let (header, all) = checkpoint::read::<f32>(path)?;
        let cfg: TrainConfig = serde_json::from_value(header.meta["train"].clone())?;
        let step = header.meta["step"].as_u64().ok_or_else(|| bad_state(path, "missing step"))? as usize;
        let adam_steps = header.meta["adam_steps"].as_u64().ok_or_else(|| bad_state(path, "missing adam_steps"))?;
        let split = |prefix: &str| {
            let mut s = ParamStore::new();
            for (name, shape, values) in all.iter() {
                if let Some(rest) = name.strip_prefix(prefix) {
                    s.insert(rest, shape, values.to_vec());
                }
            }
            s
        };
        let model = Denoiser::from_parts(header.net.clone(), split("model/"))?;
        let ema = split("ema/");
        let (m, v) = (split("adam.m/"), split("adam.v/"));
        if !ema.same_layout(model.params()) || !m.same_layout(model.params()) {
            return Err(bad_state(path, "optimizer or EMA tables do not match the model"));
        }
        let mut trainer = Trainer::new(cfg, model, materials)?;
        trainer.opt = AdamW::from_state(trainer.opt.config, m, v, adam_steps).ok_or_else(|| bad_state(path, "moment tables differ"))?;
        trainer.ema = Ema::from_weights(ema, trainer.cfg.ema_decay);
        trainer.step = step;
        Ok(trainer)
    }
}

fn bad_state(path: &Path, reason: &str) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Trains an unconditional backbone from scratch.
pub fn train_backbone(
    net: NetConfig,
    cfg: TrainConfig,
    materials: Vec<MaterialMaps<f64>>,
    dir: Option<&RunDir>,
) -> Result<Trainer> {
    if cfg.variant != Variant::Backbone {
        return Err(Error::Config("backbone training uses the backbone variant".into()));
    }
    let model = Denoiser::init_backbone(net, &mut seeded(mix_seed(&[cfg.seed, 0x494e4954])))?;
    let mut trainer = Trainer::new(cfg, model, materials)?;
    trainer.run(None, dir)?;
    Ok(trainer)
}

/// Expands the backbone's input head for `cfg.variant` and finetunes it.
pub fn finetune_conditional(
    backbone: &Denoiser<f32>,
    cfg: TrainConfig,
    materials: Vec<MaterialMaps<f64>>,
    dir: Option<&RunDir>,
) -> Result<Trainer> {
    let k = cfg.variant.cond_channels();
    if k == 0 {
        return Err(Error::Config("finetuning needs a conditional variant".into()));
    }
    let model = backbone.expand_input_head(k)?;
    let mut trainer = Trainer::new(cfg, model, materials)?;
    trainer.run(None, dir)?;
    Ok(trainer)
}

/// Training run directory: config snapshot, loss CSV and checkpoints.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub train: TrainConfig,
    pub net: NetConfig,
    pub manifest_hash: String,
    pub config_hash: String,
}

pub const LOSS_HEADER: &str = "step,lr,train_loss,eval_loss";

impl RunDir {
    /// Creates (or reopens) `root`, writing the configuration snapshot.
    pub fn create(root: &Path, snapshot: &RunSnapshot) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join("config.json");
        fs::write(&path, serde_json::to_vec_pretty(snapshot)?).map_err(io_err(&path))?;
        let dir = Self { root: root.to_path_buf() };
        let loss = dir.loss_path();
        if !loss.exists() {
            fs::write(&loss, format!("{LOSS_HEADER}\n")).map_err(io_err(&loss))?;
        }
        Ok(dir)
    }

    pub fn open(root: &Path) -> Result<(Self, RunSnapshot)> {
        let path = root.join("config.json");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Ok((Self { root: root.to_path_buf() }, serde_json::from_slice(&bytes)?))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn loss_path(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn model_path(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn ema_path(&self) -> PathBuf {
        self.root.join("ema.ckpt")
    }

    pub fn state_path(&self, step: usize) -> PathBuf {
        self.root.join(format!("state_{step:08}.ckpt"))
    }

    pub fn append_loss(&self, rec: &LossRecord) -> Result<()> {
        use std::io::Write;
        let path = self.loss_path();
        let mut f = fs::OpenOptions::new().append(true).create(true).open(&path).map_err(io_err(&path))?;
        let eval = rec.eval_loss.map(|v| format!("{v:.8e}")).unwrap_or_default();
        writeln!(f, "{},{:.8e},{:.8e},{}", rec.step, rec.lr, rec.train_loss, eval).map_err(io_err(&path))
    }

    pub fn save_state(&self, trainer: &Trainer) -> Result<()> {
        trainer.save_state(&self.state_path(trainer.step_count()))
    }

    pub fn save_models(&self, trainer: &Trainer) -> Result<()> {
        let meta = serde_json::json!({
            "step": trainer.step_count(),
            "seed": trainer.config().seed,
            "variant": trainer.config().variant,
        });
        checkpoint::save_denoiser(&self.model_path(), trainer.model(), meta.clone())?;
        checkpoint::save_denoiser(&self.ema_path(), &trainer.ema_model(), meta)
    }

    /// Most recent state checkpoint, if any.
    pub fn latest_state(&self) -> Result<Option<PathBuf>> {
        let mut states: Vec<PathBuf> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("state_") && n.ends_with(".ckpt"))
            })
            .collect();
        states.sort();
        Ok(states.pop())
    }

    /// Drops loss rows at or after `step` (used when resuming).
    pub fn truncate_loss(&self, step: usize) -> Result<()> {
        let path = self.loss_path();
        let text = fs::read_to_string(&path).unwrap_or_default();
        let mut out = String::new();
        writeln!(out, "{LOSS_HEADER}").expect("string write");
        for line in text.lines().skip(1) {
            let s: Option<usize> = line.split(',').next().and_then(|v| v.parse().ok());
            if s.is_some_and(|s| s < step) {
                writeln!(out, "{line}").expect("string write");
            }
        }
        fs::write(&path, out).map_err(io_err(&path))
    }
}

/// Loss records from a run directory's CSV.
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Config(format!("malformed loss row: {line}")))
            };
            Ok(LossRecord {
                step: num(0)? as usize,
                lr: num(1)?,
                train_loss: num(2)?,
                eval_loss: f.get(3).and_then(|v| v.parse().ok()),
            })
        })
        .collect()
}

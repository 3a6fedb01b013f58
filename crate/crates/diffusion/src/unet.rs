//! U-Net velocity predictor with ConvNeXt or residual blocks.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use svbrdf_core::{Real, LATENT_CHANNELS};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Shape, Tape, Var};
use crate::sampler::VelocityModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    ConvNext,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub resolution: usize,
    pub levels: usize,
    pub base_width: usize,
    pub channel_mult: Vec<usize>,
    pub blocks_per_level: usize,
    pub block: BlockType,
    pub attention_resolutions: Vec<usize>,
    pub heads: usize,
    pub groups: usize,
    pub time_dim: usize,
    /// Condition channels `k`; zero for the unconditional backbone.
    pub cond_channels: usize,
}

impl NetConfig {
    /// CPU-sized network: 3 resolutions, width 32.
    pub fn desk() -> Self {
        Self {
            resolution: 32,
            levels: 3,
            base_width: 32,
            channel_mult: vec![1, 2, 2],
            blocks_per_level: 1,
            block: BlockType::ConvNext,
            attention_resolutions: vec![8],
            heads: 4,
            groups: 8,
            time_dim: 128,
            cond_channels: 0,
        }
    }

    /// Full-size network: 6 resolutions, width 128.
    pub fn full_scale() -> Self {
        Self {
            resolution: 256,
            levels: 6,
            base_width: 128,
            channel_mult: vec![1, 1, 2, 2, 4, 4],
            blocks_per_level: 2,
            block: BlockType::ConvNext,
            attention_resolutions: vec![32, 16],
            heads: 8,
            groups: 32,
            time_dim: 512,
            cond_channels: 0,
        }
    }

    pub fn with_cond_channels(mut self, k: usize) -> Self {
        self.cond_channels = k;
        self
    }

    pub fn with_block(mut self, block: BlockType) -> Self {
        self.block = block;
        self
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width * self.channel_mult[level]
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        self.resolution >> level
    }

    fn has_attention(&self, level: usize) -> bool {
        self.attention_resolutions.contains(&self.level_resolution(level))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels == 0 || self.channel_mult.len() != self.levels {
            return bad(format!("{} channel multipliers for {} levels", self.channel_mult.len(), self.levels));
        }
        if self.blocks_per_level == 0 || self.groups == 0 || self.heads == 0 {
            return bad("blocks, groups and heads must be positive".into());
        }
        if self.base_width % 2 != 0 || self.time_dim == 0 {
            return bad("base width must be even and the time width positive".into());
        }
        let step = 1usize << (self.levels - 1);
        if self.resolution == 0 || self.resolution % step != 0 {
            return bad(format!("resolution {} not divisible by {step}", self.resolution));
        }
        for l in 0..self.levels {
            let w = self.width(l);
            if w == 0 || w % self.groups != 0 {
                return bad(format!("width {w} at level {l} not divisible by {} groups", self.groups));
            }
            if self.has_attention(l) && w % self.heads != 0 {
                return bad(format!("width {w} at level {l} not divisible by {} heads", self.heads));
            }
        }
        if self.width(self.levels - 1) % self.heads != 0 {
            return bad("bottleneck width not divisible by the head count".into());
        }
        for &r in &self.attention_resolutions {
            if !(0..self.levels).any(|l| self.level_resolution(l) == r) {
                return bad(format!("attention resolution {r} is not a U-Net resolution"));
            }
        }
        Ok(())
    }
}

/// Inner width of a residual block chosen so its parameter count matches
/// the ConvNeXt block with the same `cin`, `cout`.
pub fn residual_inner_width(cin: usize, cout: usize, time_dim: usize, groups: usize) -> usize {
    let convnext = cin * 49 + cin + cin * time_dim + cin + 2 * cin + 4 * cout * cin + 4 * cout + 4 * cout * cout + cout;
    let fixed = 2 * cin + cout;
    let per_mid = 9 * cin + 1 + time_dim + 1 + 2 + 9 * cout;
    let ideal = convnext.saturating_sub(fixed) as f64 / per_mid as f64;
    let mult = (ideal / groups as f64).round().max(1.0) as usize;
    mult * groups
}

const FOURIER_MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal features of the raw timestep: `width / 2` sines then cosines.
pub fn fourier_features<T: Real>(t: usize, width: usize) -> Vec<T> {
    let half = width / 2;
    let mut out = vec![T::zero(); width];
    for k in 0..half {
        let freq = (-(FOURIER_MAX_PERIOD.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = T::lit(arg.sin());
        out[half + k] = T::lit(arg.cos());
    }
    out
}

/// Network weights together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T> {
    config: NetConfig,
    params: ParamStore<T>,
}

/// Builds the parameter table; without a generator every array is zero,
/// which is enough to describe the layout.
struct Init<'a, R> {
    rng: Option<&'a mut R>,
}

impl<R: RngCore> Init<'_, R> {
    fn random<T: Real>(&mut self, p: &mut ParamStore<T>, name: String, shape: &[usize], fan_in: usize) {
        match self.rng.as_deref_mut() {
            Some(rng) => p.fan_in_normal(name, shape, fan_in, rng),
            None => p.zeros(name, shape),
        };
    }

    fn conv<T: Real>(&mut self, p: &mut ParamStore<T>, name: &str, cout: usize, cin: usize, k: usize, bias: bool) {
        self.random(p, format!("{name}.weight"), &[cout, cin, k, k], cin * k * k);
        if bias {
            p.zeros(format!("{name}.bias"), &[cout]);
        }
    }

    fn norm<T: Real>(&mut self, p: &mut ParamStore<T>, name: &str, c: usize) {
        p.filled(format!("{name}.weight"), &[c], T::one());
        p.zeros(format!("{name}.bias"), &[c]);
    }

    fn block<T: Real>(&mut self, p: &mut ParamStore<T>, cfg: &NetConfig, name: &str, cin: usize, cout: usize) {
        match cfg.block {
            BlockType::ConvNext => {
                self.random(p, format!("{name}.dw.weight"), &[cin, 1, 7, 7], 49);
                p.zeros(format!("{name}.dw.bias"), &[cin]);
                self.conv(p, &format!("{name}.time"), cin, cfg.time_dim, 1, true);
                self.norm(p, &format!("{name}.norm"), cin);
                self.conv(p, &format!("{name}.pw1"), 4 * cout, cin, 1, true);
                self.conv(p, &format!("{name}.pw2"), cout, 4 * cout, 1, true);
            }
            BlockType::Residual => {
                let mid = residual_inner_width(cin, cout, cfg.time_dim, cfg.groups);
                self.norm(p, &format!("{name}.norm1"), cin);
                self.conv(p, &format!("{name}.conv1"), mid, cin, 3, true);
                self.conv(p, &format!("{name}.time"), mid, cfg.time_dim, 1, true);
                self.norm(p, &format!("{name}.norm2"), mid);
                self.conv(p, &format!("{name}.conv2"), cout, mid, 3, true);
            }
        }
        if cin != cout {
            self.conv(p, &format!("{name}.skip"), cout, cin, 1, true);
        }
    }

    fn attention<T: Real>(&mut self, p: &mut ParamStore<T>, name: &str, c: usize) {
        self.norm(p, &format!("{name}.norm"), c);
        self.conv(p, &format!("{name}.qkv"), 3 * c, c, 1, true);
        p.zeros(format!("{name}.proj.weight"), &[c, c, 1, 1]);
        p.zeros(format!("{name}.proj.bias"), &[c]);
    }
}

impl<T: Real> Denoiser<T> {
    /// Random initialization for any `k`; the output projection starts at
    /// zero so the initial prediction is identically zero.
    pub fn init(config: NetConfig, rng: &mut impl RngCore) -> Result<Self> {
        Self::build(config, Some(rng))
    }

    fn build<R: RngCore>(config: NetConfig, rng: Option<&mut R>) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let mut p = ParamStore::new();
        let mut init = Init { rng };
        let c0 = cfg.width(0);
        init.conv(&mut p, "time.fc1", cfg.time_dim, cfg.base_width, 1, true);
        init.conv(&mut p, "time.fc2", cfg.time_dim, cfg.time_dim, 1, true);

        let head_fan_in = (LATENT_CHANNELS + cfg.cond_channels) * 9;
        init.random(&mut p, "head.weight".into(), &[c0, LATENT_CHANNELS, 3, 3], head_fan_in);
        if cfg.cond_channels > 0 {
            init.random(&mut p, "head.cond_weight".into(), &[c0, cfg.cond_channels, 3, 3], head_fan_in);
        }
        p.zeros("head.bias", &[c0]);

        let mut ch = c0;
        for l in 0..cfg.levels {
            let w = cfg.width(l);
            for b in 0..cfg.blocks_per_level {
                init.block(&mut p, cfg, &format!("down.{l}.block.{b}"), ch, w);
                ch = w;
                if cfg.has_attention(l) {
                    init.attention(&mut p, &format!("down.{l}.attn.{b}"), w);
                }
            }
        }
        init.block(&mut p, cfg, "mid.block.0", ch, ch);
        init.attention(&mut p, "mid.attn", ch);
        init.block(&mut p, cfg, "mid.block.1", ch, ch);
        for l in (0..cfg.levels).rev() {
            let w = cfg.width(l);
            for b in 0..cfg.blocks_per_level {
                let cin = if b == 0 { ch + w } else { w };
                init.block(&mut p, cfg, &format!("up.{l}.block.{b}"), cin, w);
                ch = w;
                if cfg.has_attention(l) {
                    init.attention(&mut p, &format!("up.{l}.attn.{b}"), w);
                }
            }
        }
        init.norm(&mut p, "out.norm", ch);
        p.zeros("out.conv.weight", &[LATENT_CHANNELS, ch, 3, 3]);
        p.zeros("out.conv.bias", &[LATENT_CHANNELS]);
        Ok(Self { config, params: p })
    }

    /// Unconditional backbone (`k = 0`).
    pub fn init_backbone(config: NetConfig, rng: &mut impl RngCore) -> Result<Self> {
        if config.cond_channels != 0 {
            return Err(Error::Config("the backbone takes no condition channels".into()));
        }
        Self::init(config, rng)
    }

    /// Reassembles a model from stored parameters, checking their layout
    /// against a fresh initialization of `config`.
    pub fn from_parts(config: NetConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::build::<svbrdf_core::rng::Rng>(config.clone(), None)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Config("parameter table does not match the network configuration".into()));
        }
        Ok(Self { config, params })
    }

    /// Grows the input head by `k` zero-initialized condition channels.
    pub fn expand_input_head(&self, k: usize) -> Result<Self> {
        if self.config.cond_channels != 0 {
            return Err(Error::Config("input head is already expanded".into()));
        }
        if k == 0 {
            return Err(Error::Config("expansion needs at least one condition channel".into()));
        }
        let config = self.config.clone().with_cond_channels(k);
        let c0 = config.width(0);
        let mut params = ParamStore::new();
        for (name, shape, values) in self.params.iter() {
            params.insert(name, shape, values.to_vec());
            if name == "head.weight" {
                params.zeros("head.cond_weight", &[c0, k, 3, 3]);
            }
        }
        Self::from_parts(config, params)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn id(&self, name: &str) -> ParamId {
        self.params.id(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn conv(&self, tape: &mut Tape<'_, T>, x: Var, name: &str, k: usize) -> Var {
        tape.conv(x, self.id(&format!("{name}.weight")), Some(self.id(&format!("{name}.bias"))), k)
    }

    fn norm(&self, tape: &mut Tape<'_, T>, x: Var, name: &str) -> Var {
        tape.group_norm(
            x,
            self.id(&format!("{name}.weight")),
            self.id(&format!("{name}.bias")),
            self.config.groups,
        )
    }

    fn block(&self, tape: &mut Tape<'_, T>, x: Var, temb: Var, name: &str) -> Var {
        let h = match self.config.block {
            BlockType::ConvNext => {
                let h = tape.depthwise(
                    x,
                    self.id(&format!("{name}.dw.weight")),
                    Some(self.id(&format!("{name}.dw.bias"))),
                    7,
                );
                let tb = self.conv(tape, temb, &format!("{name}.time"), 1);
                let h = tape.add_channel(h, tb);
                let h = self.norm(tape, h, &format!("{name}.norm"));
                let h = self.conv(tape, h, &format!("{name}.pw1"), 1);
                let h = tape.gelu(h);
                self.conv(tape, h, &format!("{name}.pw2"), 1)
            }
            BlockType::Residual => {
                let h = self.norm(tape, x, &format!("{name}.norm1"));
                let h = tape.silu(h);
                let h = self.conv(tape, h, &format!("{name}.conv1"), 3);
                let tb = self.conv(tape, temb, &format!("{name}.time"), 1);
                let h = tape.add_channel(h, tb);
                let h = self.norm(tape, h, &format!("{name}.norm2"));
                let h = tape.silu(h);
                self.conv(tape, h, &format!("{name}.conv2"), 3)
            }
        };
        let skip_name = format!("{name}.skip");
        let skip = if self.params.id(&format!("{skip_name}.weight")).is_some() {
            self.conv(tape, x, &skip_name, 1)
        } else {
            x
        };
        tape.add(h, skip)
    }

    fn attention(&self, tape: &mut Tape<'_, T>, x: Var, name: &str) -> Var {
        let h = self.norm(tape, x, &format!("{name}.norm"));
        let qkv = self.conv(tape, h, &format!("{name}.qkv"), 1);
        let a = tape.attention(qkv, self.config.heads);
        let p = self.conv(tape, a, &format!("{name}.proj"), 1);
        tape.add(x, p)
    }

    /// Time embedding after the two-layer MLP (before the shared SiLU).
    pub fn time_embedding(&self, t: usize) -> Vec<T> {
        let mut tape = Tape::new(&self.params);
        let v = self.time_embedding_on(&mut tape, t);
        tape.into_value(v)
    }

    fn time_embedding_on(&self, tape: &mut Tape<'_, T>, t: usize) -> Var {
        let f = tape.constant(fourier_features(t, self.config.base_width), Shape::vector(self.config.base_width));
        let h = self.conv(tape, f, "time.fc1", 1);
        let h = tape.silu(h);
        self.conv(tape, h, "time.fc2", 1)
    }

    /// Spatial size of a flattened latent, checked against the network.
    pub fn latent_resolution(&self, len: usize) -> Result<usize> {
        let px = len / LATENT_CHANNELS;
        let res = (px as f64).sqrt().round() as usize;
        if res * res * LATENT_CHANNELS != len || res == 0 {
            return Err(Error::Shape(format!("{len} values do not form a square 10-channel latent")));
        }
        let step = 1usize << (self.config.levels - 1);
        if res % step != 0 {
            return Err(Error::Shape(format!("resolution {res} not divisible by {step}")));
        }
        Ok(res)
    }

    /// Records a forward pass on `tape`. `y` is a `10 x R x R` value and
    /// `cond` a `k x R x R` value when the model is conditional.
    pub fn forward_on(&self, tape: &mut Tape<'_, T>, y: Var, t: usize, cond: Option<Var>) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(y);
        if s.c != LATENT_CHANNELS || s.h != s.w {
            return Err(Error::Shape(format!("latent input {}x{}x{}", s.c, s.h, s.w)));
        }
        let step = 1usize << (cfg.levels - 1);
        if s.h % step != 0 {
            return Err(Error::Shape(format!("resolution {} not divisible by {step}", s.h)));
        }
        match (cond, cfg.cond_channels) {
            (None, 0) => {}
            (Some(c), k) if k > 0 => {
                let cs = tape.shape(c);
                if cs != Shape::new(k, s.h, s.w) {
                    return Err(Error::Shape(format!(
                        "condition {}x{}x{} for a model expecting {k}x{}x{}",
                        cs.c, cs.h, cs.w, s.h, s.w
                    )));
                }
            }
            (None, k) => return Err(Error::Shape(format!("model expects {k} condition channels, none given"))),
            (Some(_), _) => return Err(Error::Shape("unconditional model given a condition".into())),
        }

        let temb = self.time_embedding_on(tape, t);
        let temb = tape.silu(temb);

        let mut h = tape.conv(y, self.id("head.weight"), Some(self.id("head.bias")), 3);
        if let Some(c) = cond {
            let hc = tape.conv(c, self.id("head.cond_weight"), None, 3);
            h = tape.add(h, hc);
        }

        let mut skips = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            for b in 0..cfg.blocks_per_level {
                h = self.block(tape, h, temb, &format!("down.{l}.block.{b}"));
                if cfg.has_attention(l) {
                    h = self.attention(tape, h, &format!("down.{l}.attn.{b}"));
                }
            }
            skips.push(h);
            if l + 1 < cfg.levels {
                h = tape.avg_pool2(h);
            }
        }
        h = self.block(tape, h, temb, "mid.block.0");
        h = self.attention(tape, h, "mid.attn");
        h = self.block(tape, h, temb, "mid.block.1");
        for l in (0..cfg.levels).rev() {
            h = tape.concat(h, skips[l]);
            for b in 0..cfg.blocks_per_level {
                h = self.block(tape, h, temb, &format!("up.{l}.block.{b}"));
                if cfg.has_attention(l) {
                    h = self.attention(tape, h, &format!("up.{l}.attn.{b}"));
                }
            }
            if l > 0 {
                h = tape.upsample2(h);
            }
        }
        h = self.norm(tape, h, "out.norm");
        h = tape.silu(h);
        Ok(self.conv(tape, h, "out.conv", 3))
    }

    /// Velocity estimate for a flattened channel-major latent.
    pub fn forward(&self, y: &[T], t: usize, cond: Option<&[T]>) -> Result<Vec<T>> {
        let res = self.latent_resolution(y.len())?;
        let mut tape = Tape::new(&self.params);
        let yv = tape.constant(y.to_vec(), Shape::new(LATENT_CHANNELS, res, res));
        let cv = match cond {
            Some(c) => {
                let k = c.len() / (res * res);
                if k * res * res != c.len() {
                    return Err(Error::Shape(format!("{} condition values at resolution {res}", c.len())));
                }
                Some(tape.constant(c.to_vec(), Shape::new(k, res, res)))
            }
            None => None,
        };
        let out = self.forward_on(&mut tape, yv, t, cv)?;
        Ok(tape.into_value(out))
    }
}

impl<T: Real> VelocityModel<T> for Denoiser<T> {
    fn velocity(&self, y: &[T], t: usize, cond: Option<&[T]>) -> Result<Vec<T>> {
        self.forward(y, t, cond)
    }
}

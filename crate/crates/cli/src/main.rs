use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use svbrdf_cli::capture_io::{read_capture, write_capture, CaptureInfo, EnvSource};
use svbrdf_cli::config::{PipelineConfig, Profile};
use svbrdf_cli::data::load_training_set;
use svbrdf_cli::metrics::{evaluate_relighting, hemisphere_lights};
use svbrdf_cli::replicates::{generate_replicates, select_by_render_error, ReplicateSet};
use svbrdf_cli::sheet::contact_sheet;
use svbrdf_cli::sidecar::{config_hash, sha256_hex, write_sidecar};
use svbrdf_core::io::{load_material, save_material, write_preview_png};
use svbrdf_core::rng::{mix_seed, seeded};
use svbrdf_core::shading::render_point;
use svbrdf_core::CameraModel;
use svbrdf_diffusion::checkpoint::load_denoiser;
use svbrdf_diffusion::trainer::{RunDir, RunSnapshot};
use svbrdf_diffusion::{Denoiser, SamplerConfig, Trainer, Variant};
use svbrdf_forge::{build_manifest, SourceSet};

#[derive(Parser)]
#[command(name = "svbrdf", version, about = "Diffusion-based SVBRDF synthesis and capture")]
struct Cli {
    /// Top-level seed applied to every stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Single-threaded execution for byte-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    /// TOML file overriding profile settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and materialize a training corpus.
    Forge {
        /// Directory of source materials; procedural sources when omitted.
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the unconditional backbone.
    Train(TrainArgs),
    /// Expand a backbone for a capture variant and finetune it.
    Finetune {
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Generate seed replicates for a capture.
    Sample {
        /// Checkpoint file, or a run directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of seeds (default from the configuration).
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Choose a replicate by render error, or fix one with --pick.
    Select {
        #[arg(long)]
        replicates: PathBuf,
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        pick: Option<u64>,
    },
    /// Relighting and per-map errors against a reference material.
    Eval {
        #[arg(long)]
        material: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render previews of a material, or synthesize a capture with --variant.
    Render {
        #[arg(long)]
        material: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        /// Environment maps for natural and flash/no-flash captures.
        #[arg(long)]
        env_dir: Option<PathBuf>,
    },
    /// Labeled grid of replicates for manual selection.
    Sheet {
        #[arg(long)]
        replicates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Materialized corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Use only the first N training exemplars.
    #[arg(long)]
    limit: Option<usize>,
    /// Override the step budget.
    #[arg(long)]
    steps: Option<usize>,
    /// Continue from the newest state checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
}

struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
    deterministic: bool,
}

impl Ctx {
    fn sidecar(&self, output: &Path, command: &str, extra: serde_json::Value) -> Result<()> {
        write_sidecar(
            output,
            &json!({
                "command": command,
                "seed": self.seed,
                "profile": self.cfg.profile,
                "deterministic": self.deterministic,
                "config_hash": config_hash(&self.cfg)?,
                "details": extra,
            }),
        )?;
        Ok(())
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.deterministic {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    let cfg = PipelineConfig::load(cli.profile, cli.config.as_deref())?.with_seed(cli.seed);
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::Forge { sources, out } => forge(&ctx, sources.as_deref(), &out),
        Command::Train(args) => train(&ctx, &args, None, None),
        Command::Finetune { backbone, variant, train: args } => train(&ctx, &args, Some(&backbone), variant),
        Command::Sample {
            model,
            capture,
            out,
            seeds,
        } => sample(&ctx, &model, &capture, &out, seeds),
        Command::Select { replicates, capture, pick } => select(&ctx, &replicates, &capture, pick),
        Command::Eval {
            material,
            reference,
            out,
        } => eval(&ctx, &material, &reference, out.as_deref()),
        Command::Render {
            material,
            out,
            variant,
            env_dir,
        } => render(&ctx, &material, &out, variant, env_dir.as_deref()),
        Command::Sheet { replicates, out } => sheet(&ctx, &replicates, &out),
    }
}

fn forge(ctx: &Ctx, sources: Option<&Path>, out: &Path) -> Result<()> {
    let fc = &ctx.cfg.forge;
    let set = match sources {
        Some(dir) => SourceSet::from_dir(dir)?,
        None => SourceSet::procedural(fc.procedural_sources, fc.procedural_resolution, fc.seed)?,
    };
    let manifest = build_manifest(&set, fc)?;
    let n = manifest.materialize_all(&set, out)?;
    let path = out.join("manifest.jsonl");
    let hash = sha256_hex(&fs::read(&path)?);
    ctx.sidecar(&path, "forge", json!({ "records": n, "sources": set.len(), "manifest_hash": hash }))?;
    log::info!("forged {n} exemplars from {} sources into {}", set.len(), out.display());
    Ok(())
}

fn train(ctx: &Ctx, args: &TrainArgs, backbone: Option<&Path>, variant: Option<Variant>) -> Result<()> {
    let mut tc = match backbone {
        None => ctx.cfg.train.clone(),
        Some(_) => ctx.cfg.finetune.clone(),
    };
    if let Some(v) = variant {
        tc.variant = v;
    }
    if let Some(s) = args.steps {
        tc.max_steps = Some(s);
    }
    let (materials, manifest_hash) = load_training_set(&args.data, ctx.cfg.net.resolution, args.limit)?;
    log::info!("{} training exemplars", materials.len());
    let snapshot = RunSnapshot {
        train: tc.clone(),
        net: ctx.cfg.net.clone(),
        manifest_hash,
        config_hash: config_hash(&ctx.cfg)?,
    };
    let dir = RunDir::create(&args.out, &snapshot)?;
    let mut trainer = match (args.resume, dir.latest_state()?) {
        (true, Some(state)) => {
            log::info!("resuming from {}", state.display());
            let mut t = Trainer::resume(&state, materials)?;
            if args.steps.is_some() {
                t.set_max_steps(args.steps);
            }
            dir.truncate_loss(t.step_count())?;
            t
        }
        _ => {
            let model = match backbone {
                None => Denoiser::init_backbone(ctx.cfg.net.clone(), &mut seeded(mix_seed(&[tc.seed, 0x494e4954])))?,
                Some(path) => {
                    let (b, _) = load_denoiser::<f32>(path)?;
                    b.expand_input_head(tc.variant.cond_channels())?
                }
            };
            Trainer::new(tc, model, materials)?
        }
    };
    trainer.run(None, Some(&dir))?;
    ctx.sidecar(
        &dir.model_path(),
        if backbone.is_some() { "finetune" } else { "train" },
        json!({ "steps": trainer.step_count(), "backbone": backbone }),
    )?;
    log::info!("finished at step {}", trainer.step_count());
    Ok(())
}

fn sample(ctx: &Ctx, model: &Path, capture: &Path, out: &Path, seeds: Option<usize>) -> Result<()> {
    let s = &ctx.cfg.sample;
    // a run directory resolves to its EMA or raw weights
    let model_path = if model.is_dir() {
        let (dir, _) = RunDir::open(model)?;
        if s.use_ema {
            dir.ema_path()
        } else {
            dir.model_path()
        }
    } else {
        model.to_path_buf()
    };
    let model_path = model_path.as_path();
    let (model, _) = load_denoiser::<f32>(model_path)?;
    let (info, stack) = read_capture(capture)?;
    let count = seeds.unwrap_or(s.seeds);
    let seed_list: Vec<u64> = (0..count as u64).map(|i| ctx.seed + i).collect();
    let sampler = SamplerConfig {
        steps: s.steps,
        guidance_scale: s.guidance_scale,
        eta: s.eta,
        seed: 0,
    };
    let rs = generate_replicates(&model, &stack, &seed_list, &sampler)?;
    fs::create_dir_all(out)?;
    for e in &rs.entries {
        save_material(&e.material, &out.join(format!("seed-{:06}", e.seed)))?;
    }
    let index = out.join("replicates.json");
    fs::write(
        &index,
        serde_json::to_string_pretty(&json!({
            "seeds": rs.seeds(),
            "variant": info.variant,
            "capture": capture,
            "model": model_path,
            "sampler": sampler,
        }))? + "\n",
    )?;
    ctx.sidecar(&index, "sample", json!({ "model_sha256": sha256_hex(&fs::read(model_path)?) }))?;
    log::info!("wrote {} replicates to {}", rs.entries.len(), out.display());
    Ok(())
}

fn load_replicates(dir: &Path, capture: Option<&Path>) -> Result<ReplicateSet> {
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("replicates.json")).context("reading replicates.json")?)?;
    let seeds: Vec<u64> = serde_json::from_value(index["seeds"].clone())?;
    let capture_dir = match capture {
        Some(c) => c.to_path_buf(),
        None => PathBuf::from(index["capture"].as_str().context("replicates.json lacks a capture path")?),
    };
    let (_, condition) = read_capture(&capture_dir)?;
    let entries = seeds
        .into_iter()
        .map(|seed| {
            Ok(svbrdf_cli::Replicate {
                seed,
                material: load_material(&dir.join(format!("seed-{seed:06}")))?,
                render: None,
                score: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateSet { condition, entries })
}

fn select(ctx: &Ctx, replicates: &Path, capture: &Path, pick: Option<u64>) -> Result<()> {
    let mut rs = load_replicates(replicates, Some(capture))?;
    let (info, _) = read_capture(capture)?;
    let (best, scores, method) = match pick {
        Some(seed) => {
            if rs.get(seed).is_none() {
                bail!("seed {seed} is not among the replicates {:?}", rs.seeds());
            }
            (seed, Vec::new(), "manual")
        }
        None => {
            let env = info.environments.as_ref().map(EnvSource::lighting).transpose()?;
            let lighting = env.unwrap_or(svbrdf_diffusion::Lighting { envs: Vec::new(), spp: 1 });
            let (best, scores) = select_by_render_error(&mut rs, info.lighting.as_ref(), &lighting)?;
            (best, scores, "render-error")
        }
    };
    let out = replicates.join("selection.json");
    fs::write(
        &out,
        serde_json::to_string_pretty(&json!({ "method": method, "seed": best, "seeds": rs.seeds(), "scores": scores }))? + "\n",
    )?;
    ctx.sidecar(&out, "select", json!({ "capture": capture }))?;
    println!("selected seed {best}");
    Ok(())
}

fn eval(ctx: &Ctx, material: &Path, reference: &Path, out: Option<&Path>) -> Result<()> {
    let m = load_material(material)?;
    let r = load_material(reference)?;
    let e = &ctx.cfg.eval;
    let report = evaluate_relighting(&m, &r, e.lights, e.radius, ctx.seed)?;
    println!(
        "map RMSE diffuse {:.4} specular {:.4} roughness {:.4} normal {:.4}; relighting proxy {:.4} rmse {:.4} over {} lights",
        report.map_rmse[0], report.map_rmse[1], report.map_rmse[2], report.map_rmse[3], report.mean_proxy, report.mean_rmse, report.light_count
    );
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
        ctx.sidecar(path, "eval", json!({ "material": material, "reference": reference }))?;
    }
    Ok(())
}

fn render(ctx: &Ctx, material: &Path, out: &Path, variant: Option<Variant>, env_dir: Option<&Path>) -> Result<()> {
    let m = load_material(material)?;
    match variant {
        Some(v) => {
            let ft = &ctx.cfg.finetune;
            let envs = match env_dir {
                Some(d) => EnvSource::Directory {
                    path: d.to_string_lossy().into_owned(),
                    spp: ft.spp,
                },
                None => EnvSource::Procedural {
                    count: ft.env_count,
                    seed: mix_seed(&[ft.seed, 0x454e_5653]),
                    spp: ft.spp,
                },
            };
            let lighting = envs.lighting()?;
            let capture = lighting.draw(v, &mut seeded(mix_seed(&[ctx.seed, 0x4341_5054])))?;
            let stack = lighting.render(&m, &capture)?;
            let info = CaptureInfo {
                variant: v,
                lighting: Some(capture),
                environments: Some(envs),
                photos: Vec::new(),
                view: None,
            };
            write_capture(out, &stack, info)?;
            ctx.sidecar(&out.join("capture.json"), "render", json!({ "material": material }))?;
        }
        None => {
            let e = &ctx.cfg.eval;
            let lights = hemisphere_lights(e.preview_lights.max(1), e.radius, ctx.seed)?;
            fs::create_dir_all(out)?;
            for (i, light) in lights.iter().enumerate() {
                let img = render_point(&m, light, &CameraModel::default())?;
                let path = out.join(format!("light_{i:03}.png"));
                write_preview_png(&img, 1.0, &path)?;
                ctx.sidecar(&path, "render", json!({ "material": material, "light": light.position.to_array() }))?;
            }
        }
    }
    Ok(())
}

fn sheet(ctx: &Ctx, replicates: &Path, out: &Path) -> Result<()> {
    let rs = load_replicates(replicates, None)?;
    let e = &ctx.cfg.eval;
    let lights = hemisphere_lights(e.preview_lights, e.radius, ctx.seed)?;
    let img = contact_sheet(&rs, &lights, e.tile)?;
    svbrdf_core::io::write_display_png(&img, out)?;
    ctx.sidecar(out, "sheet", json!({ "replicates": replicates, "rows": rs.entries.len() }))?;
    Ok(())
}

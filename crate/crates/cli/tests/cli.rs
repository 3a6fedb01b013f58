use std::fs;
use std::path::Path;
use std::process::Command;

fn svbrdf(args: &[&str], config: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_svbrdf"))
        .args(["--seed", "3", "--deterministic", "--config"])
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"
[forge]
procedural_sources = 4
procedural_resolution = 48
crops_per_source = 3
crop_min = 24
crop_max = 40
crop_resolution = 16
roughness_blends = 2
mixtures = 2
mixture_crop = 16
test_fraction = 0.25

[net]
resolution = 16
attention_resolutions = [4]

[train]
eval_every = 2
eval_items = 2
checkpoint_every = 2
spp = 2
env_count = 2

[finetune]
eval_every = 2
eval_items = 2
checkpoint_every = 2
spp = 2
env_count = 2

[sample]
steps = 3
seeds = 3

[eval]
lights = 8
preview_lights = 2
tile = 16
"#;

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();

    svbrdf(&["forge", "--out", &p("data")], &cfg);
    svbrdf(&["forge", "--out", &p("data2")], &cfg);
    let manifest = fs::read(root.join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest, fs::read(root.join("data2/manifest.jsonl")).unwrap());
    assert!(root.join("data/manifest.jsonl.json").exists());

    svbrdf(&["train", "--data", &p("data"), "--out", &p("backbone"), "--steps", "3"], &cfg);
    let loss = fs::read_to_string(root.join("backbone/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    assert!(loss.starts_with("step,lr,train_loss,eval_loss"));

    // a resumed run reproduces the uninterrupted loss curve
    svbrdf(&["train", "--data", &p("data"), "--out", &p("resumed"), "--steps", "2"], &cfg);
    svbrdf(&["train", "--data", &p("data"), "--out", &p("resumed"), "--steps", "3", "--resume"], &cfg);
    assert_eq!(loss, fs::read_to_string(root.join("resumed/loss.csv")).unwrap());

    svbrdf(
        &["finetune", "--backbone", &p("backbone/model.ckpt"), "--data", &p("data"), "--out", &p("ft"), "--steps", "2"],
        &cfg,
    );
    let material = p("data/basis/000000");
    svbrdf(&["render", "--material", &material, "--out", &p("capture"), "--variant", "colocated"], &cfg);
    svbrdf(&["render", "--material", &material, "--out", &p("previews")], &cfg);
    assert!(root.join("previews/light_001.png").exists());

    svbrdf(&["sample", "--model", &p("ft"), "--capture", &p("capture"), "--out", &p("reps")], &cfg);
    for seed in 3..6 {
        assert!(root.join(format!("reps/seed-{seed:06}/diffuse.png")).exists());
    }
    let picked = svbrdf(&["select", "--replicates", &p("reps"), "--capture", &p("capture")], &cfg);
    assert!(picked.starts_with("selected seed "));
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("reps/selection.json")).unwrap()).unwrap();
    assert_eq!(sel["method"], "render-error");
    assert_eq!(sel["scores"].as_array().unwrap().len(), 3);

    svbrdf(&["sheet", "--replicates", &p("reps"), "--out", &p("sheet.png")], &cfg);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("sheet.png.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 3);
    assert_eq!(sidecar["details"]["rows"], 3);

    let report = svbrdf(&["eval", "--material", &material, "--reference", &material, "--out", &p("eval.json")], &cfg);
    assert!(report.contains("relighting proxy 0.0000"));
}

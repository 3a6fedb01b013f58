use rand::Rng;
use svbrdf_cli::capture_io::{read_capture, write_capture, CaptureInfo};
use svbrdf_cli::metrics::{DEFAULT_LIGHT_COUNT, DEFAULT_LIGHT_RADIUS};
use svbrdf_cli::replicates::DEFAULT_SEED_COUNT;
use svbrdf_cli::{
    contact_sheet, evaluate_relighting, generate_replicates, hemisphere_lights, select_by_render_error, PipelineConfig,
    Profile, Replicate, ReplicateSet,
};
use svbrdf_core::rng::seeded;
use svbrdf_core::MaterialMaps;
use svbrdf_diffusion::{CaptureLighting, Denoiser, Lighting, NetConfig, SamplerConfig, Variant};
use svbrdf_forge::procedural_source;

fn material(seed: u64) -> MaterialMaps<f64> {
    procedural_source(16, &mut seeded(seed)).unwrap()
}

#[test]
fn defaults_match_published_settings() {
    assert_eq!(DEFAULT_LIGHT_COUNT, 128);
    assert_eq!(DEFAULT_LIGHT_RADIUS, 2.41);
    assert_eq!(DEFAULT_SEED_COUNT, 10);
    let cfg = PipelineConfig::profile(Profile::FullScale);
    assert_eq!(cfg.sample.steps, 20);
    assert_eq!(cfg.sample.guidance_scale, 1.0);
    assert_eq!(cfg.train.lr, 2e-5);
    assert_eq!(cfg.train.batch_size, 32);
    assert_eq!(cfg.finetune.variant, Variant::Colocated);
}

#[test]
fn relighting_self_comparison_is_exactly_zero() {
    let m = material(1);
    let r = evaluate_relighting(&m, &m, DEFAULT_LIGHT_COUNT, DEFAULT_LIGHT_RADIUS, 5).unwrap();
    assert_eq!(r.light_count, 128);
    assert_eq!(r.map_rmse, [0.0; 4]);
    assert!(r.per_light_proxy.iter().chain(&r.per_light_rmse).all(|&e| e == 0.0));
    let other = evaluate_relighting(&m, &material(2), 16, DEFAULT_LIGHT_RADIUS, 5).unwrap();
    assert!(other.mean_proxy > 0.0 && other.mean_rmse > 0.0);
}

#[test]
fn relighting_error_survives_quarter_turns() {
    // rotating both materials together only permutes pixels under lights
    // rotated with them; averaged over many lights the error barely moves
    let (a, b) = (material(3), material(4));
    let base = evaluate_relighting(&a, &b, 512, DEFAULT_LIGHT_RADIUS, 9).unwrap().mean_rmse;
    let turned = evaluate_relighting(&a.rotate90_ccw(), &b.rotate90_ccw(), 512, DEFAULT_LIGHT_RADIUS, 9).unwrap().mean_rmse;
    assert!((base - turned).abs() / base < 0.1, "{base} vs {turned}");
}

#[test]
fn light_sampling_is_prefix_stable() {
    let short = hemisphere_lights(128, DEFAULT_LIGHT_RADIUS, 3).unwrap();
    let long = hemisphere_lights(256, DEFAULT_LIGHT_RADIUS, 3).unwrap();
    assert_eq!(&long[..128], &short[..]);
    for l in &long {
        assert!(l.position.z > 0.0);
        assert!((l.position.length() - DEFAULT_LIGHT_RADIUS).abs() < 1e-9);
    }
}

fn replicate_set(n: usize) -> ReplicateSet {
    let reference = material(10);
    let lighting = Lighting::procedural(1, 0, 1);
    let capture = CaptureLighting::Colocated { distance: 1.0 };
    let condition = lighting.render(&reference, &capture).unwrap();
    let entries = (0..n as u64)
        .map(|seed| Replicate {
            seed,
            material: if seed == 3 { reference.clone() } else { material(20 + seed) },
            render: None,
            score: None,
        })
        .collect();
    ReplicateSet { condition, entries }
}

#[test]
fn exact_replicate_wins_render_error_selection() {
    let mut rs = replicate_set(6);
    let lighting = Lighting::procedural(1, 0, 1);
    let capture = CaptureLighting::Colocated { distance: 1.0 };
    let (best, scores) = select_by_render_error(&mut rs, Some(&capture), &lighting).unwrap();
    assert_eq!(best, 3);
    assert_eq!(scores[3], 0.0);
    assert!(scores.iter().enumerate().all(|(i, &s)| i == 3 || s > 0.0));
    assert!(select_by_render_error(&mut rs, None, &lighting).is_err());
}

#[test]
fn contact_sheet_layout() {
    let lights = hemisphere_lights(2, DEFAULT_LIGHT_RADIUS, 0).unwrap();
    for rows in [1, 10] {
        let sheet = contact_sheet(&replicate_set(rows), &lights, 24).unwrap();
        assert_eq!(sheet.width(), (4 + 2) * 24);
        assert_eq!(sheet.height(), rows * 24);
        assert!(sheet.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // the seed label makes otherwise identical rows differ
    let mut rs = replicate_set(2);
    rs.entries[1].material = rs.entries[0].material.clone();
    let sheet = contact_sheet(&rs, &lights, 24).unwrap();
    let stride = 24 * sheet.width() * 3;
    let row = |r: usize| &sheet.data()[r * stride..(r + 1) * stride];
    assert_ne!(row(0), row(1));
}

#[test]
fn replicates_are_reproducible_and_sorted() {
    let cfg = NetConfig {
        resolution: 16,
        attention_resolutions: vec![4],
        ..NetConfig::desk()
    };
    let mut rng = seeded(2);
    let mut model = Denoiser::<f32>::init(cfg.with_cond_channels(6), &mut rng).unwrap();
    // random output weights so that the untrained model is not identically zero
    for v in model.params_mut().values_mut() {
        for x in v.iter_mut() {
            *x += 0.02 * (rng.random::<f32>() - 0.5);
        }
    }
    let condition = replicate_set(1).condition;
    let sampler = SamplerConfig {
        steps: 4,
        ..SamplerConfig::default()
    };
    let a = generate_replicates(&model, &condition, &[5, 1, 5], &sampler).unwrap();
    let b = generate_replicates(&model, &condition, &[1, 5], &sampler).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.seeds(), vec![1, 5]);
    let (m1, m5) = (&a.get(1).unwrap().material, &a.get(5).unwrap().material);
    assert!(m1.map_rmse(m5).unwrap().iter().any(|&e| e > 1e-3));
    let wrong = replicate_set(1).condition.photos[..1].to_vec();
    let bad = svbrdf_diffusion::ConditionStack::new(wrong, None).unwrap();
    assert!(generate_replicates(&model, &bad, &[0], &sampler).is_err());
}

#[test]
fn capture_directory_round_trip() {
    let lighting = Lighting::procedural(2, 4, 4);
    let capture = lighting.draw(Variant::Natural, &mut seeded(1)).unwrap();
    let stack = lighting.render(&material(5), &capture).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let info = CaptureInfo {
        variant: Variant::Natural,
        lighting: Some(capture),
        environments: None,
        photos: Vec::new(),
        view: None,
    };
    write_capture(dir.path(), &stack, info).unwrap();
    let (back, read) = read_capture(dir.path()).unwrap();
    assert_eq!(back.lighting, Some(capture));
    assert_eq!(read.channels(), stack.channels());
    for (x, y) in read.photos.iter().zip(&stack.photos) {
        let err: f64 = x.rmse(y).unwrap();
        assert!(err < 1e-3 * y.mean().max(1e-3), "{err}");
    }
}

use std::collections::HashSet;

use rand::Rng;
use svbrdf_core::rng::{mix_seed, seeded};
use svbrdf_core::{Image, MaterialMaps, Vec3};
use svbrdf_forge::mix::{mix_with, one_hot, selection, upsample2};
use svbrdf_forge::roughness::procedural_map;
use svbrdf_forge::{
    apply_crop, build_manifest, procedural_roughness, procedural_source, CropSpec, DatasetManifest, ForgeConfig,
    Provenance, RandomFeatureNet, SourceSet, Split, SPECULAR_RANGE,
};

fn small_config() -> ForgeConfig {
    ForgeConfig {
        procedural_sources: 8,
        procedural_resolution: 64,
        crops_per_source: 4,
        crop_min: 24,
        crop_max: 48,
        crop_resolution: 24,
        roughness_blends: 6,
        mixtures: 6,
        mixture_crop: 16,
        ..ForgeConfig::desk()
    }
}

#[test]
fn fuzzed_recipes_satisfy_material_invariants() {
    let pool: Vec<MaterialMaps<f64>> = (0..6).map(|i| procedural_source(48, &mut seeded(100 + i)).unwrap()).collect();
    for trial in 0..1000u64 {
        let mut rng = seeded(mix_seed(&[7, trial]));
        let k = rng.random_range(1..=3);
        let mut parts = Vec::new();
        for _ in 0..k {
            let src = &pool[rng.random_range(0..pool.len())];
            let spec = CropSpec::random(48, 12, 40, &mut rng).unwrap();
            let mut m = apply_crop(src, &spec, 16).unwrap();
            if rng.random::<bool>() {
                m = procedural_roughness(&m, &mut rng).unwrap().1;
            }
            assert!(m.is_valid(), "trial {trial}: crop {spec:?}");
            parts.push(m);
        }
        if parts.len() > 1 {
            let (mixed, _) = mix_with(&parts, rng.random()).unwrap();
            assert_eq!(mixed.resolution(), 16);
            assert!(mixed.is_valid(), "trial {trial}: mixture");
        }
    }
}

fn lambert(m: &MaterialMaps<f64>, light: Vec3<f64>) -> Image<f64> {
    let res = m.resolution();
    Image::from_fn(res, res, 1, |r, c, px| {
        px[0] = m.diffuse_at(r, c).mean() * m.normal_at(r, c).dot(light).max(0.0);
    })
}

#[test]
fn rotated_crops_keep_shading_consistent() {
    // smooth bumps so that bilinear resampling of normals and of shading agree
    let res = 96;
    let height = Image::from_fn(res, res, 1, |r, c, px| {
        let (y, x) = (r as f64 / res as f64, c as f64 / res as f64);
        px[0] = 3.0 * ((std::f64::consts::TAU * x).sin() + (std::f64::consts::TAU * 2.0 * y).cos());
    });
    let normal = svbrdf_core::height_to_normals(&svbrdf_core::HeightField::new(height).unwrap(), 1.0);
    let flat = |v: f64, ch: usize| Image::filled(res, res, ch, v);
    let m = MaterialMaps::new(flat(0.8, 3), flat(0.05, 3), flat(0.5, 1), normal).unwrap();

    let light = Vec3::new(0.6, 0.2, 0.77).normalize();
    let shaded = lambert(&m, light);
    let as_material = MaterialMaps::new(
        Image::stack_channels(&[&shaded, &shaded, &shaded]).unwrap(),
        flat(0.05, 3),
        flat(0.5, 1),
        Image::from_fn(res, res, 3, |_, _, p| p.copy_from_slice(&[0.0, 0.0, 1.0])),
    )
    .unwrap();
    let mut rng = seeded(3);
    for _ in 0..8 {
        let spec = CropSpec::random(res, 40, 60, &mut rng).unwrap();
        let crop = apply_crop(&m, &spec, 48).unwrap();
        let direct = lambert(&crop, light.rotate_z(spec.angle));
        let resampled = apply_crop(&as_material, &spec, 48).unwrap().diffuse.slice_channels(0, 1);
        let err = direct.rmse(&resampled).unwrap();
        assert!(err < 2e-2, "angle {} rmse {err}", spec.angle);
    }
}

#[test]
fn roughness_networks_differ_between_seeds() {
    let m = procedural_source(64, &mut seeded(42)).unwrap();
    let maps: Vec<Image<f64>> =
        (0..6).map(|s| procedural_map(&m, &RandomFeatureNet::standard(1000 + s, 1)).unwrap()).collect();
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            let n = maps[i].data().len();
            let differing = maps[i].data().iter().zip(maps[j].data()).filter(|(a, b)| (*a - *b).abs() > 0.05).count();
            assert!(differing as f64 >= 0.05 * n as f64, "seeds {i} and {j}: {differing}/{n}");
        }
    }
}

#[test]
fn mixture_selection_is_one_hot_before_downsampling() {
    let sources: Vec<_> = (0..3).map(|i| procedural_source(16, &mut seeded(i)).unwrap()).collect();
    let up: Vec<_> = sources.iter().map(|s| upsample2(s).unwrap()).collect();
    let sel = selection(&up, &RandomFeatureNet::standard(9, 3)).unwrap();
    assert_eq!(sel.len(), 32 * 32);
    for w in one_hot(&sel, 3) {
        assert!(w.iter().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(w.iter().sum::<f64>(), 1.0);
    }
    let (_, chosen) = mix_with(&sources, 9).unwrap();
    assert_eq!(chosen, sel);
}

#[test]
fn desk_record_counts_follow_config() {
    let cfg = ForgeConfig::desk();
    let sources = SourceSet::procedural(cfg.procedural_sources, cfg.procedural_resolution, cfg.seed).unwrap();
    let man = build_manifest(&sources, &cfg).unwrap();

    let test_sources = (cfg.test_fraction * cfg.procedural_sources as f64).round() as usize;
    let basis = cfg.procedural_sources * cfg.crops_per_source;
    assert_eq!(basis, 512);
    assert_eq!(man.test_sources.len(), test_sources);
    assert_eq!(man.count(Split::Test), test_sources * cfg.crops_per_source);
    assert_eq!(man.count(Split::Train), basis - test_sources * cfg.crops_per_source + cfg.mixtures);
    let blends = man.records.iter().filter(|r| matches!(r.provenance, Provenance::RoughnessBlend { .. })).count();
    assert_eq!(blends, cfg.roughness_blends);
    let three = man
        .records
        .iter()
        .filter(|r| matches!(&r.provenance, Provenance::Mixture(m) if m.sources.len() == 3))
        .count();
    assert_eq!(three, (0.34 * cfg.mixtures as f64).round() as usize);
}

#[test]
fn manifests_are_reproducible_and_leak_free() {
    let cfg = small_config();
    let sources = SourceSet::procedural(cfg.procedural_sources, cfg.procedural_resolution, cfg.seed).unwrap();
    let a = build_manifest(&sources, &cfg).unwrap().to_jsonl().unwrap();
    let b = build_manifest(&sources, &cfg).unwrap().to_jsonl().unwrap();
    assert_eq!(a, b);
    let other = ForgeConfig { seed: cfg.seed + 1, ..cfg.clone() };
    assert_ne!(a, build_manifest(&sources, &other).unwrap().to_jsonl().unwrap());

    let man = DatasetManifest::from_jsonl(&a).unwrap();
    assert_eq!(man.to_jsonl().unwrap(), a);
    let test: HashSet<&str> = man.test_sources.iter().map(String::as_str).collect();
    let mut used = HashSet::new();
    for r in &man.records {
        match &r.provenance {
            Provenance::Crop { source, .. } | Provenance::RoughnessBlend { source, .. } => {
                assert_eq!(test.contains(source.as_str()), r.split == Split::Test);
            }
            Provenance::Mixture(recipe) => {
                for id in &recipe.sources {
                    assert!(used.insert(id.clone()), "{id} reused");
                    assert_eq!(man.record(id).unwrap().split, Split::Train);
                }
            }
        }
    }
}

#[test]
fn materialized_corpus_round_trips_from_disk() {
    let cfg = small_config();
    let sources = SourceSet::procedural(cfg.procedural_sources, cfg.procedural_resolution, cfg.seed).unwrap();
    let man = build_manifest(&sources, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = man.materialize_all(&sources, dir.path()).unwrap();
    assert_eq!(written, man.records.len());
    let back = DatasetManifest::read(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(back, man);
    let rec = man.records.iter().find(|r| r.is_mixture()).unwrap();
    let m = man.materialize(&sources, rec).unwrap();
    assert_eq!(m.resolution(), cfg.mixture_crop);
    let spec = m.specular_at(0, 0).mean();
    assert!(spec >= 0.0 && spec <= 1.0);
}

#[test]
fn capacity_errors_are_reported() {
    let cfg = ForgeConfig { mixtures: 500, ..small_config() };
    let sources = SourceSet::procedural(cfg.procedural_sources, cfg.procedural_resolution, cfg.seed).unwrap();
    assert!(build_manifest(&sources, &cfg).is_err());
    assert!(SPECULAR_RANGE.0 == 0.04 && SPECULAR_RANGE.1 == 0.08);
}


mod properties {
    use proptest::prelude::*;
    use svbrdf_core::rng::seeded;
    use svbrdf_core::{MaterialMaps, Vec3};
    use svbrdf_forge::mix::mix_with;
    use svbrdf_forge::{apply_crop, CropSpec};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn random_crops_stay_inside(seed in any::<u64>(), res in 16usize..200, min in 1usize..16, extra in 0usize..64) {
            let spec = CropSpec::random(res, min, min + extra, &mut seeded(seed)).unwrap();
            prop_assert!(spec.contained_in(res));
            prop_assert!(spec.size >= min as f64 && spec.size <= (min + extra) as f64);
        }

        #[test]
        fn constant_pair_mixes_in_quarters(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let n = Vec3::new(0.0, 0.0, 1.0);
            let ma = MaterialMaps::constant(4, Vec3::splat(a), Vec3::splat(0.05), 0.3, n);
            let mb = MaterialMaps::constant(4, Vec3::splat(b), Vec3::splat(0.05), 0.3, n);
            let (mixed, _) = mix_with(&[ma, mb], seed).unwrap();
            for &v in mixed.diffuse.data() {
                let ok = (0..=4).any(|k| {
                    let w = k as f64 / 4.0;
                    (v - (w * a + (1.0 - w) * b)).abs() < 1e-12
                });
                prop_assert!(ok, "{} from {} and {}", v, a, b);
            }
        }

        #[test]
        fn crops_of_constants_are_constant(seed in any::<u64>()) {
            let m = MaterialMaps::constant(40, Vec3::new(0.2, 0.4, 0.6), Vec3::splat(0.05), 0.7, Vec3::new(0.0, 0.0, 1.0));
            let spec = CropSpec::random(40, 8, 30, &mut seeded(seed)).unwrap();
            let c = apply_crop(&m, &spec, 8).unwrap();
            prop_assert!(c.map_rmse(&MaterialMaps::constant(8, Vec3::new(0.2, 0.4, 0.6), Vec3::splat(0.05), 0.7, Vec3::new(0.0, 0.0, 1.0))).unwrap().iter().all(|&e| e < 1e-12));
        }
    }
}

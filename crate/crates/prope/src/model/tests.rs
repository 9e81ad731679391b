use super::*;
use crate::camera::test_support::random_se3;
use crate::camera::reanchor_world;
use crate::synth::{render, sample_cameras, DatasetSpec, Scene, SceneParams, Split, ZoomMode};
use crate::tensor::Adam;

fn spec_for(image_size: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_scenes: 2,
        views_per_scene: 2,
        n_targets: 1,
        image_size,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: ZoomMode::Fixed,
        split: Split::Train,
        seed,
        scene_params: None,
    }
}

fn make_episode(image_size: usize, n_ref: usize, n_tgt: usize, seed: u64) -> (Episode, Vec<Image>) {
    let spec = spec_for(image_size, seed);
    let scene = Scene::generate(spec.scene_seed(0), &SceneParams::default());
    let mut rng = Rng::new(seed ^ 0x5eed);
    let cams = sample_cameras(&mut rng, n_ref + n_tgt, &spec).unwrap();
    let conv = PixelConvention::Centers;
    let references: Vec<(Image, Camera)> = cams[..n_ref]
        .iter()
        .map(|c| (render(&scene, c, conv).unwrap(), *c))
        .collect();
    let targets: Vec<Camera> = cams[n_ref..].to_vec();
    let truths: Vec<Image> = targets.iter().map(|c| render(&scene, c, conv).unwrap()).collect();
    (Episode::nvs(references, targets), truths)
}

fn tiny_config(scheme: &str) -> ModelConfig {
    let mut cfg = ModelConfig::with_scheme(scheme).unwrap();
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.head_dim = 8;
    cfg.n_layers = 2;
    cfg
}

#[test]
fn token_count_matches_arithmetic() {
    let cfg = ModelConfig::with_scheme("prope").unwrap();
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(32, 2, 1, 1);
    let (tokens, layout, _) = model.tokenize(&episode).unwrap();
    assert_eq!(layout.token_count(), 3 * 64);
    assert_eq!(tokens.shape(), &[192, 64]);
}

#[test]
fn pad_scheme_tokens_independent_of_extrinsics() {
    let cfg = tiny_config("prope");
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (mut episode, _) = make_episode(8, 2, 1, 2);
    let (a, _, _) = model.tokenize(&episode).unwrap();
    let mut rng = Rng::new(7);
    for (_, cam) in episode.references.iter_mut() {
        cam.extrinsics = random_se3(&mut rng, 1.0);
    }
    episode.targets[0].extrinsics = random_se3(&mut rng, 1.0);
    let (b, _, _) = model.tokenize(&episode).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn pluecker_tokens_change_under_reanchoring() {
    let cfg = tiny_config("pluecker");
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(8, 2, 1, 3);
    let (a, _, _) = model.tokenize(&episode).unwrap();
    let g = random_se3(&mut Rng::new(11), 1.0);
    let mut moved = episode.clone();
    let cams: Vec<Camera> = moved.references.iter().map(|(_, c)| *c).collect();
    let newcams = reanchor_world(&cams, &g);
    for (i, (_, c)) in moved.references.iter_mut().enumerate() {
        *c = newcams[i];
    }
    moved.targets = reanchor_world(&moved.targets, &g);
    let (b, _, _) = model.tokenize(&moved).unwrap();
    let dev = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0_f64, f64::max);
    assert!(dev > 1e-3, "pluecker tokens should be frame-dependent, dev {dev}");
}

#[test]
fn forward_nvs_shape_and_range() {
    let cfg = tiny_config("prope");
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(8, 2, 2, 4);
    let preds = model.forward_nvs(&episode).unwrap();
    assert_eq!(preds.len(), 2);
    for img in &preds {
        assert_eq!((img.width, img.height), (8, 8));
        for &v in &img.data {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn relative_schemes_invariant_under_reanchoring_end_to_end() {
    for scheme in ["cape", "gta", "prope", "prope+camray"] {
        let cfg = tiny_config(scheme);
        let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
        let (episode, _) = make_episode(8, 2, 1, 5);
        let base = model.forward_nvs(&episode).unwrap();
        let mut rng = Rng::new(13);
        for trial in 0..10 {
            let g = random_se3(&mut rng, 1.0);
            let mut moved = episode.clone();
            let cams: Vec<Camera> = moved.references.iter().map(|(_, c)| *c).collect();
            let newcams = reanchor_world(&cams, &g);
            for (i, (_, c)) in moved.references.iter_mut().enumerate() {
                *c = newcams[i];
            }
            moved.targets = reanchor_world(&moved.targets, &g);
            let out = model.forward_nvs(&moved).unwrap();
            for (a, b) in base.iter().zip(&out) {
                let dev = a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0_f64, f64::max);
                assert!(dev <= 1e-8, "{scheme} trial {trial}: deviation {dev}");
            }
        }
    }
}

#[test]
fn raymap_schemes_violate_frame_invariance_end_to_end() {
    for scheme in ["pluecker", "naive"] {
        let cfg = tiny_config(scheme);
        let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
        let (episode, _) = make_episode(8, 2, 1, 6);
        let base = model.forward_nvs(&episode).unwrap();
        let g = random_se3(&mut Rng::new(17), 1.0);
        let mut moved = episode.clone();
        let cams: Vec<Camera> = moved.references.iter().map(|(_, c)| *c).collect();
        let newcams = reanchor_world(&cams, &g);
        for (i, (_, c)) in moved.references.iter_mut().enumerate() {
            *c = newcams[i];
        }
        moved.targets = reanchor_world(&moved.targets, &g);
        let out = model.forward_nvs(&moved).unwrap();
        let dev = base[0]
            .data
            .iter()
            .zip(&out[0].data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0_f64, f64::max);
        assert!(dev > 1e-3, "{scheme}: expected frame dependence, dev {dev}");
    }
}

#[test]
fn model_loss_gradient_matches_finite_differences() {
    // Tiny config: T = 2 tokens, d = 16, one layer.
    let mut cfg = tiny_config("prope");
    cfg.image_size = 4;
    cfg.n_layers = 1;
    let mut model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, truths) = make_episode(4, 1, 1, 7);
    let err = grad_check_params(&mut model, |m| m.loss_nvs(&episode, &truths), 1e-4).unwrap();
    assert!(err < 1e-5, "model gradient error {err}");
}

#[test]
fn cognition_outputs_are_probabilities() {
    let mut cfg = tiny_config("prope+camray");
    cfg.head = TaskHead::Cognition;
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(8, 4, 0, 8);
    let mut rng = Rng::new(3);
    let corrupted = corrupt_episode(&episode.references, &mut rng).unwrap();
    let probs = model.forward_cognition(&corrupted).unwrap();
    assert_eq!(probs.numel(), 4);
    let sum: f64 = probs.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert!(probs.data().iter().all(|&p| p >= 0.0));
}

#[test]
fn cognition_uniform_on_identical_pairs() {
    let mut cfg = tiny_config("prope");
    cfg.head = TaskHead::Cognition;
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(8, 2, 0, 9);
    // Clone one view N times: all logits identical.
    let view = episode.references[0].clone();
    let ep = Episode {
        references: vec![view.clone(), view.clone(), view.clone(), view],
        targets: vec![],
        label: Some(0),
    };
    let probs = model.forward_cognition(&ep).unwrap();
    for &p in probs.data() {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn cognition_permutation_equivariance() {
    let mut cfg = tiny_config("prope+camray");
    cfg.head = TaskHead::Cognition;
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(8, 4, 0, 10);
    let corrupted = corrupt_episode(&episode.references, &mut Rng::new(5)).unwrap();
    let probs = model.forward_cognition(&corrupted).unwrap();
    // Rotate image order by one.
    let mut rotated = corrupted.clone();
    rotated.references.rotate_left(1);
    let probs_rot = model.forward_cognition(&rotated).unwrap();
    for i in 0..4 {
        let j = (i + 1) % 4;
        assert!(
            (probs.data()[j] - probs_rot.data()[i]).abs() < 1e-10,
            "permutation mismatch at {i}"
        );
    }
}

#[test]
fn mse_loss_cases() {
    let a = Tensor::constant(&[2, 2], vec![0.5; 4]).unwrap();
    let b = Tensor::constant(&[2, 2], vec![0.0; 4]).unwrap();
    assert!((mse_loss(&a, &a).unwrap().item()).abs() < 1e-15);
    assert!((mse_loss(&a, &b).unwrap().item() - 0.25).abs() < 1e-15);
    // Elementwise-summed oracle on random data.
    let mut rng = Rng::new(20);
    let x: Vec<f64> = (0..12).map(|_| rng.unit()).collect();
    let y: Vec<f64> = (0..12).map(|_| rng.unit()).collect();
    let oracle = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 12.0;
    let xt = Tensor::constant(&[3, 4], x).unwrap();
    let yt = Tensor::constant(&[3, 4], y).unwrap();
    assert!((mse_loss(&xt, &yt).unwrap().item() - oracle).abs() < 1e-15);
}

#[test]
fn corrupt_episode_two_views_swaps_the_other_pose() {
    let (episode, _) = make_episode(8, 2, 0, 11);
    let views = episode.references.clone();
    let mut rng = Rng::new(1);
    let corrupted = corrupt_episode(&views, &mut rng).unwrap();
    let label = corrupted.label.unwrap();
    let donor = 1 - label;
    assert_eq!(
        corrupted.references[label].1.extrinsics,
        views[donor].1.extrinsics
    );
    assert_eq!(corrupted.references[label].1.intrinsics, views[label].1.intrinsics);
}

#[test]
fn corrupt_episode_changes_exactly_one_extrinsics() {
    let (episode, _) = make_episode(8, 4, 0, 12);
    let views = episode.references.clone();
    let corrupted = corrupt_episode(&views, &mut Rng::new(2)).unwrap();
    let changed: Vec<usize> = (0..4)
        .filter(|&i| corrupted.references[i].1.extrinsics != views[i].1.extrinsics)
        .collect();
    assert_eq!(changed, vec![corrupted.label.unwrap()]);
}

#[test]
fn corrupt_episode_label_distribution_uniform() {
    let (episode, _) = make_episode(8, 5, 0, 13);
    let views = episode.references.clone();
    let mut rng = Rng::new(3);
    let mut counts = [0usize; 5];
    let trials = 10_000;
    for _ in 0..trials {
        let c = corrupt_episode(&views, &mut rng).unwrap();
        counts[c.label.unwrap()] += 1;
    }
    let expected = trials as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Chi-squared with 4 dof at p = 0.01 is 13.277.
    assert!(chi2 < 13.277, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn corrupt_episode_rejects_single_view() {
    let (episode, _) = make_episode(8, 1, 0, 14);
    assert!(corrupt_episode(&episode.references, &mut Rng::new(0)).is_err());
}

#[test]
fn parameter_count_identical_across_schemes() {
    let schemes = [
        "naive", "pluecker", "camray", "cape", "gta", "prope", "prope+camray", "gta+camray",
        "prope_proj_only", "prope_rope_only",
    ];
    let counts: Vec<usize> = schemes
        .iter()
        .map(|s| {
            let cfg = tiny_config(s);
            Model::init(&cfg, &mut Rng::new(0)).unwrap().param_count()
        })
        .collect();
    for (s, c) in schemes.iter().zip(&counts) {
        assert_eq!(*c, counts[0], "{s} has {c} params, expected {}", counts[0]);
    }
}

#[test]
fn single_adam_step_decreases_loss() {
    for seed in [0, 1, 2] {
        let cfg = tiny_config("prope");
        let mut model = Model::init(&cfg, &mut Rng::new(seed)).unwrap();
        let (episode, truths) = make_episode(8, 2, 1, 20 + seed);
        model.zero_grads();
        let loss0 = model.loss_nvs(&episode, &truths).unwrap();
        loss0.backward().unwrap();
        let grads: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        let mut adam = Adam::new(1e-4);
        let mut ps = model.params_mut();
        let mut refs: Vec<&mut Tensor> = ps.iter_mut().map(|(_, t)| &mut **t).collect();
        adam.step(&mut refs, &grads).unwrap();
        drop(ps);
        let loss1 = model.loss_nvs(&episode, &truths).unwrap();
        assert!(
            loss1.item() < loss0.item(),
            "seed {seed}: loss {} -> {}",
            loss0.item(),
            loss1.item()
        );
    }
}

#[test]
fn checkpoint_round_trip_preserves_model_and_rng() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config("prope+camray");
    let model = Model::init(&cfg, &mut Rng::new(9)).unwrap();
    let mut rng = Rng::new(42);
    for _ in 0..5 {
        rng.unit();
    }
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model, &rng, 123).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt.step, 123);
    assert_eq!(ckpt.config, cfg);
    let restored = model_from_checkpoint(&ckpt).unwrap();
    for ((n1, t1), (n2, t2)) in model.params().iter().zip(restored.params().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.data(), t2.data());
    }
    let mut rng2 = Rng::restore(ckpt.rng);
    assert_eq!(rng.next_u64(), rng2.next_u64());
    // Same predictions after restore.
    let (episode, _) = make_episode(8, 2, 1, 30);
    let a = model.forward_nvs(&episode).unwrap();
    let b = restored.forward_nvs(&episode).unwrap();
    assert_eq!(a[0].data, b[0].data);
}

#[test]
fn config_validation_rejects_bad_combinations() {
    let mut cfg = ModelConfig::with_scheme("prope").unwrap();
    cfg.head_dim = 12;
    cfg.d_model = 24;
    assert!(cfg.validate().is_err(), "head_dim 12 not divisible by 8");

    let mut cfg = ModelConfig::with_scheme("prope").unwrap();
    cfg.token_input = Some(TokenInput::RaymapConcat);
    assert!(cfg.validate().is_err(), "prope is a pad-embedding scheme");

    let mut cfg = ModelConfig::with_scheme("pluecker").unwrap();
    cfg.token_input = Some(TokenInput::RaymapConcat);
    assert!(cfg.validate().is_ok());

    let mut cfg = ModelConfig::with_scheme("prope").unwrap();
    cfg.image_size = 30;
    assert!(cfg.validate().is_err(), "30 not divisible by patch 4");
}

#[test]
fn scheme_names_round_trip() {
    for s in [
        "naive", "pluecker", "camray", "none", "cape", "gta", "prope", "prope+camray",
        "gta+camray", "prope_proj_only", "prope_rope_only", "prope_rope_only+camray",
    ] {
        let parsed = Scheme::parse(s).unwrap();
        if s == "none" {
            assert_eq!(parsed.name(), "none");
        } else {
            assert_eq!(parsed.name(), s);
        }
    }
    assert!(Scheme::parse("bogus").is_err());
    assert!(Scheme::parse("prope+bogus").is_err());
}

#[test]
fn normalized_cameras_fit_unit_ball() {
    let (episode, _) = make_episode(8, 4, 0, 15);
    let cams: Vec<Camera> = episode.references.iter().map(|(_, c)| *c).collect();
    let normalized = normalize_cameras(&cams);
    let origins: Vec<_> = normalized.iter().map(|c| c.origin()).collect();
    let centroid = origins.iter().sum::<crate::camera::Vec3>() / origins.len() as f64;
    assert!(centroid.norm() < 1e-9, "centroid {centroid:?}");
    for o in &origins {
        assert!(o.norm() <= 1.0 + 1e-9, "origin escaped the unit ball: {o:?}");
    }
}

#[test]
fn full_width_application_also_frame_invariant() {
    let mut cfg = tiny_config("prope");
    cfg.d_application = DApplication::FullWidth;
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, _) = make_episode(8, 2, 1, 16);
    let base = model.forward_nvs(&episode).unwrap();
    let g = random_se3(&mut Rng::new(23), 1.0);
    let mut moved = episode.clone();
    let cams: Vec<Camera> = moved.references.iter().map(|(_, c)| *c).collect();
    let newcams = reanchor_world(&cams, &g);
    for (i, (_, c)) in moved.references.iter_mut().enumerate() {
        *c = newcams[i];
    }
    moved.targets = reanchor_world(&moved.targets, &g);
    let out = model.forward_nvs(&moved).unwrap();
    let dev = base[0]
        .data
        .iter()
        .zip(&out[0].data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0_f64, f64::max);
    assert!(dev <= 1e-8, "full-width deviation {dev}");
}

#[test]
fn patch_level_raymaps_work() {
    let mut cfg = tiny_config("pluecker");
    cfg.raymap_at = RaymapLevel::Patch;
    let model = Model::init(&cfg, &mut Rng::new(0)).unwrap();
    let (episode, truths) = make_episode(8, 2, 1, 17);
    let loss = model.loss_nvs(&episode, &truths).unwrap();
    assert!(loss.item().is_finite());
}

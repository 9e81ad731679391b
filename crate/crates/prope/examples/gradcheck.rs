//! Finite-difference gradient checking: primitive ops, every attention
//! variant, and the full model loss.
//!
//!     cargo run --release -p prope --example gradcheck

use prope::attention::{attend_conditioned, AttentionConfig, AttnScheme};
use prope::camera::sample_camera;
use prope::encoding::{Role, RopeParams, TokenLayout};
use prope::model::{grad_check_params, Episode, Model, ModelConfig};
use prope::synth::{build_dataset, DatasetSpec, Split, ZoomMode};
use prope::tensor::{grad_check, Rng, Tensor};

fn rand_matrix(rng: &mut Rng, t: usize, d: usize) -> Tensor {
    let data = (0..t * d).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::constant(&[t, d], data).unwrap()
}

fn main() -> prope::Result<()> {
    let mut rng = Rng::new(2);

    println!("primitive ops (worst relative error vs central differences):");
    let x = rand_matrix(&mut rng, 3, 4);
    println!("  matmul     {:.3e}", grad_check(|t| t.matmul(&t.transpose2d()?)?.sum(), &x, 1e-5)?);
    println!("  softmax    {:.3e}", grad_check(|t| t.softmax(1)?.mul(t)?.sum(), &x, 1e-5)?);
    println!("  layer_norm {:.3e}", grad_check(|t| t.layer_norm(1e-6)?.mul(t)?.sum(), &x, 1e-5)?);
    println!("  gelu       {:.3e}", grad_check(|t| t.gelu()?.mean(), &x, 1e-5)?);

    println!("\nattention variants, d(out.sum)/dQ:");
    let layout = TokenLayout::grid(2, 1, &[Role::Reference, Role::Reference]);
    let cams = vec![sample_camera(&mut rng), sample_camera(&mut rng)];
    let d = 16;
    let (q, k, v) = (rand_matrix(&mut rng, 4, d), rand_matrix(&mut rng, 4, d), rand_matrix(&mut rng, 4, d));
    for scheme in [AttnScheme::None, AttnScheme::Cape, AttnScheme::Gta, AttnScheme::Prope] {
        let cfg = AttentionConfig {
            scheme,
            head_dim: d,
            rope: RopeParams::default(),
        };
        let err = grad_check(|t| attend_conditioned(&cfg, t, &k, &v, &layout, &cams)?.sum(), &q, 1e-5)?;
        println!("  {scheme:?}: {err:.3e}");
    }

    println!("\nfull model MSE loss w.r.t. every parameter (tiny config):");
    let mut cfg = ModelConfig::with_scheme("prope")?;
    cfg.image_size = 4;
    cfg.patch_size = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.head_dim = 8;
    cfg.n_layers = 1;
    let mut model = Model::init(&cfg, &mut Rng::new(0))?;
    let spec = DatasetSpec {
        n_scenes: 1,
        views_per_scene: 1,
        n_targets: 1,
        image_size: 4,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: ZoomMode::Fixed,
        split: Split::Train,
        seed: 8,
        scene_params: None,
    };
    let ds = build_dataset(&spec)?;
    let scene = &ds.scenes[0];
    let targets: Vec<_> = scene.targets.iter().map(|(_, c)| *c).collect();
    let truths: Vec<_> = scene.targets.iter().map(|(img, _)| img.clone()).collect();
    let episode = Episode::nvs(scene.references.clone(), targets);
    let err = grad_check_params(&mut model, |m| m.loss_nvs(&episode, &truths), 1e-4)?;
    println!("  {} parameters checked, worst error {err:.3e}", model.param_count());
    Ok(())
}

//! Small end-to-end view-synthesis comparison: train two conditioning
//! schemes on the same synthetic scenes with matched budgets and report
//! held-out PSNR.
//!
//!     cargo run --release -p prope --example train_nvs
//!
//! Takes a couple of minutes; shrink `steps` for a quicker look.

use prope::harness::{evaluate, train, Condition, OptimConfig, Paths, RunConfig, Task};
use prope::model::ModelConfig;
use prope::synth::{build_dataset, DatasetSpec, Split, ZoomMode};

fn main() -> prope::Result<()> {
    let train_spec = DatasetSpec {
        n_scenes: 32,
        views_per_scene: 2,
        n_targets: 1,
        image_size: 32,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: ZoomMode::Fixed,
        split: Split::Train,
        seed: 100,
        scene_params: None,
    };
    let test_spec = DatasetSpec {
        n_scenes: 12,
        split: Split::Test,
        seed: 200,
        ..train_spec.clone()
    };
    let train_set = build_dataset(&train_spec)?;
    let test_set = build_dataset(&test_spec)?;

    for scheme in ["pluecker", "prope"] {
        let config = RunConfig {
            task: Task::Nvs,
            seed: 0,
            model: ModelConfig::with_scheme(scheme)?,
            train_data: train_spec.clone(),
            test_data: test_spec.clone(),
            optim: OptimConfig {
                steps: 1200,
                ..OptimConfig::default()
            },
            paths: Paths::default(),
        };
        let outcome = train(&config, &train_set)?;
        let report = evaluate(&outcome.model, &test_set, Condition::Standard, Task::Nvs, 0)?;
        let first: f64 = outcome.loss_log[..50].iter().map(|(_, l)| l).sum::<f64>() / 50.0;
        let last: f64 = outcome.loss_log[outcome.loss_log.len() - 50..].iter().map(|(_, l)| l).sum::<f64>() / 50.0;
        println!(
            "{scheme:<10} train loss {first:.4} -> {last:.4}, test PSNR {:.2} dB",
            report.mean()
        );
    }
    Ok(())
}

//! Spatial cognition task: five posed views of a scene, one of which has a
//! wrong camera pose swapped in from another view. Train a classifier to
//! spot the inconsistent pair and compare conditioning schemes.
//!
//!     cargo run --release -p prope --example spatial_cognition

use prope::harness::{evaluate, train, Condition, OptimConfig, Paths, RunConfig, Task};
use prope::model::{ModelConfig, TaskHead};
use prope::synth::{build_dataset, DatasetSpec, Split, ZoomMode};

fn main() -> prope::Result<()> {
    let train_spec = DatasetSpec {
        n_scenes: 48,
        views_per_scene: 5,
        n_targets: 0,
        image_size: 16,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: ZoomMode::Fixed,
        split: Split::Train,
        seed: 300,
        scene_params: None,
    };
    let test_spec = DatasetSpec {
        n_scenes: 32,
        split: Split::Test,
        seed: 400,
        ..train_spec.clone()
    };
    let train_set = build_dataset(&train_spec)?;
    let test_set = build_dataset(&test_spec)?;

    println!("5 views per episode, one corrupted pose; chance accuracy 20%\n");
    for scheme in ["pluecker", "prope+camray"] {
        let mut model = ModelConfig::with_scheme(scheme)?;
        model.image_size = 16;
        model.head = TaskHead::Cognition;
        let config = RunConfig {
            task: Task::Cognition,
            seed: 0,
            model,
            train_data: train_spec.clone(),
            test_data: test_spec.clone(),
            optim: OptimConfig {
                steps: 1500,
                ..OptimConfig::default()
            },
            paths: Paths::default(),
        };
        let outcome = train(&config, &train_set)?;
        let report = evaluate(&outcome.model, &test_set, Condition::Standard, Task::Cognition, 0)?;
        println!("{scheme:<14} test accuracy {:.1}%", 100.0 * report.mean());
    }
    Ok(())
}

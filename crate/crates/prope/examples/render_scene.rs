//! Render a procedural sphere scene from a few orbit cameras and write the
//! views as PPM files under ./renders/.
//!
//!     cargo run --release -p prope --example render_scene

use std::fs;
use std::io::Write;

use prope::camera::PixelConvention;
use prope::synth::{render, sample_cameras, DatasetSpec, Image, Scene, SceneParams, Split, ZoomMode};
use prope::tensor::Rng;

fn write_ppm(path: &str, img: &Image) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
    f.write_all(&bytes)
}

fn main() -> prope::Result<()> {
    let spec = DatasetSpec {
        n_scenes: 1,
        views_per_scene: 6,
        n_targets: 0,
        image_size: 128,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: ZoomMode::UniformZoom { min: 1.0, max: 2.0 },
        split: Split::Train,
        seed: 5,
        scene_params: None,
    };
    let scene = Scene::generate(spec.scene_seed(0), &SceneParams::default());
    println!("scene with {} spheres, light {:?}", scene.spheres.len(), scene.light_dir);

    let mut rng = Rng::substream(spec.scene_seed(0), 1);
    let cams = sample_cameras(&mut rng, 6, &spec)?;
    fs::create_dir_all("renders")?;
    for (i, cam) in cams.iter().enumerate() {
        let img = render(&scene, cam, PixelConvention::Centers)?;
        let path = format!("renders/view_{i:02}.ppm");
        write_ppm(&path, &img)?;
        println!("wrote {path} (focal {:.3})", cam.intrinsics.fx);
    }
    Ok(())
}

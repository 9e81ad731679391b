//! Build the three raymap kinds for a camera and show what happens to each
//! when the world frame is redefined: naive and Plücker values move, CamRay
//! values do not.
//!
//!     cargo run --release -p prope --example raymaps

use prope::camera::{reanchor_world, sample_camera, sample_se3, PixelConvention};
use prope::raymap::{build_raymap, RaymapKind};
use prope::tensor::Rng;

fn main() -> prope::Result<()> {
    let mut rng = Rng::new(7);
    let mut cam = sample_camera(&mut rng);
    cam.width = 8;
    cam.height = 8;
    let conv = PixelConvention::Centers;

    println!("camera: fx={:.3} fy={:.3}, origin {:?}\n", cam.intrinsics.fx, cam.intrinsics.fy, cam.origin());

    for kind in [RaymapKind::Naive, RaymapKind::Pluecker, RaymapKind::CamRay] {
        let map = build_raymap(kind, &cam, conv)?;
        let v = map.at(4, 4);
        println!("{kind:?} ({} channels), center pixel: {v:.4?}", map.channels);
    }

    // Redefine the world frame and measure how much each map moves.
    let g = sample_se3(&mut rng, 1.0);
    let moved = reanchor_world(&[cam], &g)[0];
    println!("\nafter re-anchoring the world by a random rigid transform:");
    for kind in [RaymapKind::Naive, RaymapKind::Pluecker, RaymapKind::CamRay] {
        let before = build_raymap(kind, &cam, conv)?;
        let after = build_raymap(kind, &moved, conv)?;
        let dev = before
            .values
            .iter()
            .zip(&after.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        println!("  {kind:?}: max change {dev:.3e}");
    }
    println!("\nabsolute raymaps depend on the frame; CamRay is exactly invariant.");
    Ok(())
}

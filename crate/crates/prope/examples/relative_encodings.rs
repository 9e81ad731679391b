//! Per-token block-diagonal transforms: construction, the relative
//! transform D_{t1} D_{t2}^{-1} that attention realizes, its invariance to
//! world re-anchoring, and the reductions connecting PRoPE to GTA and RoPE.
//!
//!     cargo run --release -p prope --example relative_encodings

use prope::camera::{reanchor_world, sample_camera, sample_se3, Intrinsics};
use prope::encoding::{d_cape, d_gta, d_prope, ApplyMode, Role, RopeParams, TokenLayout};
use prope::tensor::Rng;

fn mm(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            c[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
    c
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> prope::Result<()> {
    let mut rng = Rng::new(3);
    let d = 16;
    let rope = RopeParams::default();
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    let cams = vec![sample_camera(&mut rng), sample_camera(&mut rng)];

    let cape = d_cape(&layout, &cams, d)?;
    let gta = d_gta(&layout, &cams, d, &rope)?;
    let prope = d_prope(&layout, &cams, d, &rope)?;
    println!("built D_t for {} tokens, dim {d}, schemes cape/gta/prope\n", layout.token_count());

    // The relative transform between two tokens survives a world remap.
    let g = sample_se3(&mut rng, 1.0);
    let moved = reanchor_world(&cams, &g);
    for (name, before, after) in [
        ("cape", &cape, &d_cape(&layout, &moved, d)?),
        ("gta", &gta, &d_gta(&layout, &moved, d, &rope)?),
        ("prope", &prope, &d_prope(&layout, &moved, d, &rope)?),
    ] {
        let rel_b = mm(&before.dense_matrix(0, ApplyMode::Plain), &before.dense_matrix(5, ApplyMode::Inverse), d);
        let rel_a = mm(&after.dense_matrix(0, ApplyMode::Plain), &after.dense_matrix(5, ApplyMode::Inverse), d);
        println!("{name}: relative transform change under re-anchoring = {:.3e}", max_diff(&rel_b, &rel_a));
    }

    // Reduction 1: identity intrinsics collapse PRoPE onto GTA.
    let mut flat_cams = cams.clone();
    for c in flat_cams.iter_mut() {
        c.intrinsics = Intrinsics::identity();
    }
    let g1 = d_gta(&layout, &flat_cams, d, &rope)?;
    let p1 = d_prope(&layout, &flat_cams, d, &rope)?;
    let dev = (0..layout.token_count())
        .map(|t| max_diff(&g1.dense_matrix(t, ApplyMode::Plain), &p1.dense_matrix(t, ApplyMode::Plain)))
        .fold(0.0_f64, f64::max);
    println!("\nprope(K = I) vs gta: elementwise difference = {dev:.3e}");

    // Reduction 2: same-image token pairs leave only the RoPE rotation.
    let rel = mm(&prope.dense_matrix(0, ApplyMode::Plain), &prope.dense_matrix(3, ApplyMode::Inverse), d);
    let mut proj_part_dev = 0.0_f64;
    for i in 0..d / 2 {
        for j in 0..d / 2 {
            let expect = if i == j { 1.0 } else { 0.0 };
            proj_part_dev = proj_part_dev.max((rel[i * d + j] - expect).abs());
        }
    }
    println!("same-image relative transform, projective half vs identity = {proj_part_dev:.3e}");
    println!("(the remaining half is the relative RoPE rotation between patch positions)");
    Ok(())
}

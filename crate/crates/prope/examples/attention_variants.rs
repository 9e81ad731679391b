//! Run every attention variant on the same Q/K/V and measure global frame
//! invariance: relative schemes are unchanged by world re-anchoring, while
//! attention over raymap-derived tokens is not.
//!
//!     cargo run --release -p prope --example attention_variants

use prope::attention::{attend, attend_conditioned, AttentionConfig, AttnScheme};
use prope::camera::{reanchor_world, sample_camera, sample_se3, PixelConvention};
use prope::encoding::{Role, RopeParams, TokenLayout};
use prope::raymap::naive_raymap;
use prope::tensor::{Rng, Tensor};

fn rand_matrix(rng: &mut Rng, t: usize, d: usize) -> Tensor {
    let data = (0..t * d).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::constant(&[t, d], data).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> prope::Result<()> {
    let mut rng = Rng::new(11);
    let d = 16;
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    let t = layout.token_count();
    let (q, k, v) = (rand_matrix(&mut rng, t, d), rand_matrix(&mut rng, t, d), rand_matrix(&mut rng, t, d));
    let cams = vec![sample_camera(&mut rng), sample_camera(&mut rng)];
    let g = sample_se3(&mut rng, 1.0);
    let moved = reanchor_world(&cams, &g);

    println!("{:<18} {:>14}", "scheme", "invariance dev");
    for scheme in [AttnScheme::None, AttnScheme::Cape, AttnScheme::Gta, AttnScheme::Prope] {
        let cfg = AttentionConfig {
            scheme,
            head_dim: d,
            rope: RopeParams::default(),
        };
        let before = attend_conditioned(&cfg, &q, &k, &v, &layout, &cams)?;
        let after = attend_conditioned(&cfg, &q, &k, &v, &layout, &moved)?;
        println!("{:<18} {:>14.3e}", format!("{scheme:?}"), max_diff(before.data(), after.data()));
    }

    // Counter-test: plain attention whose inputs come from absolute raymaps.
    let proj = rand_matrix(&mut rng, 6, d);
    let tokens = |cs: &[prope::camera::Camera]| -> prope::Result<Tensor> {
        let mut rows = Vec::new();
        for c in cs {
            let mut c = *c;
            c.width = 2;
            c.height = 2;
            rows.extend_from_slice(&naive_raymap(&c, PixelConvention::Centers)?.values);
        }
        Tensor::constant(&[8, 6], rows)?.matmul(&proj)
    };
    let x1 = tokens(&cams)?;
    let x2 = tokens(&moved)?;
    let dev = max_diff(attend(&x1, &x1, &x1)?.data(), attend(&x2, &x2, &x2)?.data());
    println!("{:<18} {:>14.3e}  (tokens built from naive raymaps)", "none+raymap", dev);
    println!("\nrelative schemes are invariant to the choice of world frame; absolute ones are not.");
    Ok(())
}

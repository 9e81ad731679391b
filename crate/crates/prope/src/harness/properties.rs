//! Executable property suite behind `prope check`.
//!
//! Every invariant the library claims is re-checked here with fixed seeds:
//! geometry round trips, raymap and relative-encoding frame invariance,
//! dense-oracle agreement, gradient checks, determinism, metric sanity.
//! Each property prints one PASS/FAIL line; any failure makes the command
//! exit nonzero.
//!
//! `Mutation::CorruptProj` deliberately breaks one projective block inside
//! the prope transform used by the invariance properties — a check that the
//! checker itself can detect a broken encoding.

use std::time::Instant;

use crate::attention::{attend, attend_cape, attend_gta, AttentionConfig, AttnScheme};
use crate::camera::{
    lift_projection, invert_lifted, reanchor_world, relative_projection, sample_camera, sample_se3, Camera, Mat4,
};
use crate::encoding::{d_cape, d_gta, d_prope, ApplyMode, BlockDiagonalTransform, Role, RopeParams, TokenLayout};
use crate::error::{Error, Result};
use crate::harness::{evaluate, train, Condition, Task};
use crate::metrics::{accuracy, psnr};
use crate::model::{grad_check_params, Episode, Model, ModelConfig};
use crate::raymap::{build_raymap, camray_raymap, naive_raymap, pluecker_raymap, RaymapKind};
use crate::synth::{build_dataset, render, Image, Scene, SceneParams};
use crate::tensor::{grad_check, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Perturb one entry of a projective block in the prope transforms used
    /// by the frame-invariance properties.
    CorruptProj,
}

pub struct PropertyResult {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
    pub millis: u128,
}

type Check = fn(&Ctx) -> std::result::Result<(), String>;

struct Ctx {
    mutation: Mutation,
}

impl Ctx {
    fn prope_transform(
        &self,
        layout: &TokenLayout,
        cams: &[Camera],
        d: usize,
        rope: &RopeParams,
    ) -> std::result::Result<BlockDiagonalTransform, String> {
        let mut t = d_prope(layout, cams, d, rope).map_err(|e| e.to_string())?;
        if self.mutation == Mutation::CorruptProj {
            t.perturb_first_mat_block(0, 0.05);
        }
        Ok(t)
    }
}

fn fail(msg: impl Into<String>) -> std::result::Result<(), String> {
    Err(msg.into())
}

fn ok_if(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        fail(msg)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rand_matrix(rng: &mut Rng, t: usize, d: usize) -> Tensor {
    let data = (0..t * d).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::constant(&[t, d], data).expect("shape matches data")
}

fn mm_dense(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            c[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
    c
}

// ── tensor ──────────────────────────────────────────────────────────

fn tensor_grad_checks(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1001);
    type Case = (&'static str, fn(&Tensor) -> Result<Tensor>);
    let cases: Vec<Case> = vec![
        ("add", |x| x.add(x)?.sum()),
        ("mul", |x| x.mul(x)?.mean()),
        ("scale", |x| x.scale(-0.7)?.sum()),
        ("gelu", |x| x.gelu()?.sum()),
        ("sigmoid", |x| x.sigmoid()?.sum()),
        ("softmax", |x| x.softmax(1)?.mul(x)?.sum()),
        ("log_softmax", |x| x.log_softmax(1)?.mul(x)?.mean()),
        ("layer_norm", |x| x.layer_norm(1e-6)?.mul(x)?.sum()),
        ("matmul", |x| x.matmul(&x.transpose2d()?)?.sum()),
        ("concat_slice", |x| {
            let rows = Tensor::concat(&[x.slice(0, 0, 2)?, x.slice(0, 1, 3)?], 0)?;
            let bcast = x.reshape(&[12])?.slice(0, 0, 4)?.broadcast_rows(4)?;
            rows.mul(&bcast)?.sum()
        }),
    ];
    for (name, f) in &cases {
        for trial in 0..20 {
            let x = rand_matrix(&mut rng, 3, 4);
            let err = grad_check(f, &x, 1e-5).map_err(|e| e.to_string())?;
            if err >= 1e-5 {
                return fail(format!("{name} trial {trial}: gradient error {err}"));
            }
        }
    }
    Ok(())
}

fn tensor_softmax_normalization(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1002);
    for _ in 0..50 {
        let x = rand_matrix(&mut rng, 6, 9).scale(1e4).map_err(|e| e.to_string())?;
        let y = x.softmax(1).map_err(|e| e.to_string())?;
        for row in y.data().chunks_exact(9) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() >= 1e-12 {
                return fail(format!("softmax row sums to {s}"));
            }
        }
    }
    Ok(())
}

fn tensor_determinism(_: &Ctx) -> std::result::Result<(), String> {
    let run = || {
        let mut rng = Rng::new(1003);
        let a = rand_matrix(&mut rng, 16, 16);
        let out = a.matmul(&a).unwrap().softmax(1).unwrap().sum().unwrap();
        out.item()
    };
    let (x, y) = (run(), run());
    ok_if(x.to_bits() == y.to_bits(), format!("repeat runs differ: {x} vs {y}"))
}

// ── camera ──────────────────────────────────────────────────────────

fn camera_lift_invert_residual(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1010);
    for i in 0..1000 {
        let cam = sample_camera(&mut rng);
        let p = lift_projection(&cam);
        let inv = invert_lifted(&p, &cam).map_err(|e| e.to_string())?;
        let residual = (p.matrix() * inv.matrix() - Mat4::identity()).abs().max();
        if residual >= 1e-12 {
            return fail(format!("camera {i}: residual {residual}"));
        }
    }
    Ok(())
}

fn camera_relative_self_identity(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1011);
    for _ in 0..200 {
        let cam = sample_camera(&mut rng);
        let p = lift_projection(&cam);
        let dev = (relative_projection(&p, &p) - Mat4::identity()).abs().max();
        if dev > 1e-14 {
            return fail(format!("self relative transform deviates by {dev}"));
        }
    }
    Ok(())
}

fn camera_relative_reanchor_invariance(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1012);
    let c1 = sample_camera(&mut rng);
    let c2 = sample_camera(&mut rng);
    let rel = relative_projection(&lift_projection(&c1), &lift_projection(&c2));
    for i in 0..100 {
        let g = sample_se3(&mut rng, 1.0);
        let moved = reanchor_world(&[c1, c2], &g);
        let rel2 = relative_projection(&lift_projection(&moved[0]), &lift_projection(&moved[1]));
        let dev = (rel - rel2).abs().max();
        if dev >= 1e-11 {
            return fail(format!("anchor {i}: deviation {dev}"));
        }
    }
    Ok(())
}

fn camera_identity_intrinsics_reduction(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1013);
    for _ in 0..100 {
        let e1 = sample_se3(&mut rng, 1.0);
        let e2 = sample_se3(&mut rng, 1.0);
        let c1 = Camera::new(crate::camera::Intrinsics::identity(), e1, 8, 8).map_err(|e| e.to_string())?;
        let c2 = Camera::new(crate::camera::Intrinsics::identity(), e2, 8, 8).map_err(|e| e.to_string())?;
        let rel = relative_projection(&lift_projection(&c1), &lift_projection(&c2));
        let expected = e1.compose(&e2.inverse()).matrix4();
        let dev = (rel - expected).abs().max();
        if dev >= 1e-12 {
            return fail(format!("reduction to relative SE(3) off by {dev}"));
        }
    }
    Ok(())
}

fn camera_ray_round_trip(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1014);
    for _ in 0..500 {
        let cam = sample_camera(&mut rng);
        let p = lift_projection(&cam);
        let u = rng.uniform(-0.5, 0.5);
        let v = rng.uniform(-0.5, 0.5);
        let d = crate::camera::ray_direction(&p, u, v).map_err(|e| e.to_string())?;
        let lambda = rng.uniform(0.5, 5.0);
        let x = cam.origin() + d * lambda;
        let (u2, v2, depth) = crate::camera::project_point(&p, &x).map_err(|e| e.to_string())?;
        if depth <= 0.0 || (u2 - u).abs() >= 1e-9 || (v2 - v).abs() >= 1e-9 {
            return fail(format!("round trip ({u},{v}) -> ({u2},{v2}), depth {depth}"));
        }
    }
    Ok(())
}

// ── raymaps ─────────────────────────────────────────────────────────

fn raymap_frame_dependence(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1020);
    let mut cam = sample_camera(&mut rng);
    cam.width = 8;
    cam.height = 8;
    let g = sample_se3(&mut rng, 1.0);
    let moved = reanchor_world(&[cam], &g)[0];
    let conv = crate::camera::PixelConvention::Centers;

    let cr1 = camray_raymap(&cam, conv).map_err(|e| e.to_string())?;
    let cr2 = camray_raymap(&moved, conv).map_err(|e| e.to_string())?;
    if cr1.values != cr2.values {
        return fail("camray raymap changed under re-anchoring");
    }
    for (name, map1, map2) in [
        (
            "naive",
            naive_raymap(&cam, conv).map_err(|e| e.to_string())?,
            naive_raymap(&moved, conv).map_err(|e| e.to_string())?,
        ),
        (
            "pluecker",
            pluecker_raymap(&cam, conv).map_err(|e| e.to_string())?,
            pluecker_raymap(&moved, conv).map_err(|e| e.to_string())?,
        ),
    ] {
        let dev = max_abs_diff(&map1.values, &map2.values);
        if dev <= 1e-3 {
            return fail(format!("{name} raymap should move under re-anchoring, dev {dev}"));
        }
    }
    Ok(())
}

fn raymap_pluecker_origin_slide(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1021);
    let mut cam = sample_camera(&mut rng);
    cam.width = 8;
    cam.height = 8;
    let conv = crate::camera::PixelConvention::Centers;
    let map = pluecker_raymap(&cam, conv).map_err(|e| e.to_string())?;
    let o = cam.origin();
    for y in 0..8 {
        for x in 0..8 {
            let v = map.at(x, y);
            let d = crate::camera::Vec3::new(v[3], v[4], v[5]);
            for lambda in [-2.0, 0.5, 7.0] {
                let slid = (o + d * lambda).cross(&d);
                let dev = (slid.x - v[0]).abs().max((slid.y - v[1]).abs()).max((slid.z - v[2]).abs());
                if dev >= 1e-12 {
                    return fail(format!("moment moved by {dev} under origin slide"));
                }
            }
        }
    }
    Ok(())
}

fn raymap_unit_directions(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1022);
    let conv = crate::camera::PixelConvention::Centers;
    for _ in 0..5 {
        let mut cam = sample_camera(&mut rng);
        cam.width = 8;
        cam.height = 8;
        for kind in [RaymapKind::Naive, RaymapKind::Pluecker, RaymapKind::CamRay] {
            let map = build_raymap(kind, &cam, conv).map_err(|e| e.to_string())?;
            for y in 0..map.height {
                for x in 0..map.width {
                    let v = map.at(x, y);
                    let d = &v[v.len() - 3..];
                    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    if (norm - 1.0).abs() >= 1e-9 {
                        return fail(format!("direction norm {norm}"));
                    }
                }
            }
        }
    }
    Ok(())
}

// ── encodings ───────────────────────────────────────────────────────

fn encoding_relative_frame_invariance(ctx: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1030);
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    let d = 16;
    let rope = RopeParams::default();
    for _ in 0..10 {
        let cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
        let g = sample_se3(&mut rng, 1.0);
        let moved = reanchor_world(&cams, &g);
        let before = [
            d_cape(&layout, &cams, d).map_err(|e| e.to_string())?,
            d_gta(&layout, &cams, d, &rope).map_err(|e| e.to_string())?,
            ctx.prope_transform(&layout, &cams, d, &rope)?,
        ];
        let after = [
            d_cape(&layout, &moved, d).map_err(|e| e.to_string())?,
            d_gta(&layout, &moved, d, &rope).map_err(|e| e.to_string())?,
            // The mutation corrupts only the "before" side, imitating an
            // implementation bug that breaks the relative transform.
            d_prope(&layout, &moved, d, &rope).map_err(|e| e.to_string())?,
        ];
        for (scheme, (b, a)) in ["cape", "gta", "prope"].iter().zip(before.iter().zip(after.iter())) {
            for t1 in 0..layout.token_count() {
                for t2 in 0..layout.token_count() {
                    let rel_b = mm_dense(&b.dense_matrix(t1, ApplyMode::Plain), &b.dense_matrix(t2, ApplyMode::Inverse), d);
                    let rel_a = mm_dense(&a.dense_matrix(t1, ApplyMode::Plain), &a.dense_matrix(t2, ApplyMode::Inverse), d);
                    let dev = max_abs_diff(&rel_b, &rel_a);
                    if dev > 1e-11 {
                        return fail(format!("{scheme}: relative transform moved by {dev}"));
                    }
                }
            }
        }
    }
    Ok(())
}

fn encoding_dense_oracle(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1031);
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    let d = 16;
    let rope = RopeParams::default();
    let mut cases = 0;
    while cases < 1000 {
        let cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
        let transforms = [
            d_cape(&layout, &cams, d).map_err(|e| e.to_string())?,
            d_gta(&layout, &cams, d, &rope).map_err(|e| e.to_string())?,
            d_prope(&layout, &cams, d, &rope).map_err(|e| e.to_string())?,
        ];
        for transform in &transforms {
            let x = rand_matrix(&mut rng, layout.token_count(), d);
            for mode in [ApplyMode::Plain, ApplyMode::Transpose, ApplyMode::Inverse, ApplyMode::InverseTranspose] {
                let fast = transform.apply(&x, mode).map_err(|e| e.to_string())?;
                for t in 0..layout.token_count() {
                    let dense = transform.dense_matrix(t, mode);
                    let row = &x.data()[t * d..(t + 1) * d];
                    for i in 0..d {
                        let expect: f64 = (0..d).map(|j| dense[i * d + j] * row[j]).sum();
                        if (fast.data()[t * d + i] - expect).abs() >= 1e-12 {
                            return fail(format!("dense mismatch in mode {mode:?}"));
                        }
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(())
}

fn encoding_inverse_round_trip(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1032);
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    let d = 16;
    for _ in 0..20 {
        let cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
        let t = d_prope(&layout, &cams, d, &RopeParams::default()).map_err(|e| e.to_string())?;
        let x = rand_matrix(&mut rng, layout.token_count(), d);
        let y = t.apply(&x, ApplyMode::Inverse).map_err(|e| e.to_string())?;
        let z = t.apply(&y, ApplyMode::Plain).map_err(|e| e.to_string())?;
        let dev = max_abs_diff(x.data(), z.data());
        if dev >= 1e-10 {
            return fail(format!("inverse round trip off by {dev}"));
        }
    }
    Ok(())
}

fn encoding_rope_orthogonality_and_rigidity(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1033);
    // RoPE blocks orthogonal.
    for _ in 0..50 {
        let pos = rng.uniform(-30.0, 30.0);
        let m = crate::encoding::rope_block(pos, 8, &RopeParams::default()).map_err(|e| e.to_string())?;
        for i in 0..8 {
            for j in 0..8 {
                let acc: f64 = (0..8).map(|k| m[k * 8 + i] * m[k * 8 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (acc - expect).abs() >= 1e-12 {
                    return fail("rope block not orthogonal");
                }
            }
        }
    }
    // Identity-intrinsics projective blocks are rigid motions.
    for _ in 0..20 {
        let mut cam = sample_camera(&mut rng);
        cam.intrinsics = crate::camera::Intrinsics::identity();
        let p = lift_projection(&cam);
        let r = p.matrix().fixed_view::<3, 3>(0, 0).into_owned();
        let dev = (r.transpose() * r - crate::camera::Mat3::identity()).abs().max();
        if dev >= 1e-12 {
            return fail(format!("identity-K projective block not orthonormal: {dev}"));
        }
    }
    Ok(())
}

fn encoding_prope_gta_agreement(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1034);
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    for _ in 0..20 {
        let mut cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
        for c in cams.iter_mut() {
            c.intrinsics = crate::camera::Intrinsics::identity();
        }
        let g = d_gta(&layout, &cams, 16, &RopeParams::default()).map_err(|e| e.to_string())?;
        let p = d_prope(&layout, &cams, 16, &RopeParams::default()).map_err(|e| e.to_string())?;
        for t in 0..layout.token_count() {
            if g.dense_matrix(t, ApplyMode::Plain) != p.dense_matrix(t, ApplyMode::Plain) {
                return fail("gta and prope disagree under identity intrinsics");
            }
        }
    }
    Ok(())
}

// ── attention ───────────────────────────────────────────────────────

fn attention_frame_invariance(ctx: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1040);
    let layout = TokenLayout::grid(2, 2, &[Role::Reference, Role::Reference]);
    let d = 16;
    let rope = RopeParams::default();
    let q = rand_matrix(&mut rng, 8, d);
    let k = rand_matrix(&mut rng, 8, d);
    let v = rand_matrix(&mut rng, 8, d);
    for i in 0..100 {
        let cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
        let g = sample_se3(&mut rng, 1.0);
        let moved = reanchor_world(&cams, &g);

        let cape_b = attend_cape(&q, &k, &v, &d_cape(&layout, &cams, d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let cape_a = attend_cape(&q, &k, &v, &d_cape(&layout, &moved, d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let gta_b = attend_gta(&q, &k, &v, &d_gta(&layout, &cams, d, &rope).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let gta_a = attend_gta(&q, &k, &v, &d_gta(&layout, &moved, d, &rope).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let prope_b = attend_gta(&q, &k, &v, &ctx.prope_transform(&layout, &cams, d, &rope)?).map_err(|e| e.to_string())?;
        let prope_a = attend_gta(&q, &k, &v, &d_prope(&layout, &moved, d, &rope).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

        for (scheme, b, a) in [("cape", &cape_b, &cape_a), ("gta", &gta_b, &gta_a), ("prope", &prope_b, &prope_a)] {
            let dev = max_abs_diff(b.data(), a.data());
            if dev > 1e-10 {
                return fail(format!("{scheme} anchor {i}: attention output moved by {dev}"));
            }
        }
    }
    Ok(())
}

fn attention_score_rows_sum_to_one(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1041);
    let q = rand_matrix(&mut rng, 6, 8);
    let k = rand_matrix(&mut rng, 6, 8);
    let scores = q
        .matmul_nt(&k)
        .and_then(|s| s.scale(1.0 / (8.0_f64).sqrt()))
        .and_then(|s| s.softmax(1))
        .map_err(|e| e.to_string())?;
    for row in scores.data().chunks_exact(6) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() >= 1e-12 {
            return fail(format!("score row sums to {s}"));
        }
    }
    Ok(())
}

fn attention_grad_checks(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1042);
    let layout = TokenLayout::grid(2, 1, &[Role::Reference, Role::Reference]);
    let cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
    let d = 16;
    let q = rand_matrix(&mut rng, 4, d);
    let k = rand_matrix(&mut rng, 4, d);
    let v = rand_matrix(&mut rng, 4, d);
    for scheme in [AttnScheme::None, AttnScheme::Cape, AttnScheme::Gta, AttnScheme::Prope] {
        let cfg = AttentionConfig {
            scheme,
            head_dim: d,
            rope: RopeParams::default(),
        };
        for (name, err) in [
            ("q", grad_check(|x| crate::attention::attend_conditioned(&cfg, x, &k, &v, &layout, &cams)?.sum(), &q, 1e-5)),
            ("k", grad_check(|x| crate::attention::attend_conditioned(&cfg, &q, x, &v, &layout, &cams)?.sum(), &k, 1e-5)),
            ("v", grad_check(|x| crate::attention::attend_conditioned(&cfg, &q, &k, x, &layout, &cams)?.sum(), &v, 1e-5)),
        ] {
            let err = err.map_err(|e| e.to_string())?;
            if err >= 1e-5 {
                return fail(format!("{scheme:?} d{name}: gradient error {err}"));
            }
        }
    }
    Ok(())
}

fn attention_reduction_chain(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1043);
    let layout = TokenLayout::grid(2, 1, &[Role::Reference, Role::Reference]);
    let d = 16;
    let rope = RopeParams::default();
    let q = rand_matrix(&mut rng, 4, d);
    let k = rand_matrix(&mut rng, 4, d);
    let v = rand_matrix(&mut rng, 4, d);

    let mut cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
    for c in cams.iter_mut() {
        c.intrinsics = crate::camera::Intrinsics::identity();
    }
    let a = attend_gta(&q, &k, &v, &d_prope(&layout, &cams, d, &rope).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = attend_gta(&q, &k, &v, &d_gta(&layout, &cams, d, &rope).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if max_abs_diff(a.data(), b.data()) >= 1e-12 {
        return fail("prope(K=I) != gta");
    }

    let id_cams = vec![Camera::identity(8, 8); 2];
    let layout_zero = TokenLayout::grid(1, 1, &[Role::Reference, Role::Reference]);
    let qz = rand_matrix(&mut rng, 2, d);
    let kz = rand_matrix(&mut rng, 2, d);
    let vz = rand_matrix(&mut rng, 2, d);
    let a = attend_gta(&qz, &kz, &vz, &d_gta(&layout_zero, &id_cams, d, &rope).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = attend(&qz, &kz, &vz).map_err(|e| e.to_string())?;
    if max_abs_diff(a.data(), b.data()) >= 1e-12 {
        return fail("gta(T=I, pos=0) != none");
    }

    let cam = sample_camera(&mut rng);
    let a = attend_cape(&q, &k, &v, &d_cape(&layout, &[cam, cam], d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = attend(&q, &k, &v).map_err(|e| e.to_string())?;
    if max_abs_diff(a.data(), b.data()) >= 1e-12 {
        return fail("cape(equal cameras) != none");
    }
    Ok(())
}

fn attention_permutation_equivariance(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1044);
    let layout = TokenLayout::grid(2, 1, &[Role::Reference, Role::Reference]);
    let cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
    let cfg = AttentionConfig {
        scheme: AttnScheme::Prope,
        head_dim: 16,
        rope: RopeParams::default(),
    };
    let tpi = layout.tokens_per_image();
    let q = rand_matrix(&mut rng, 2 * tpi, 16);
    let k = rand_matrix(&mut rng, 2 * tpi, 16);
    let v = rand_matrix(&mut rng, 2 * tpi, 16);
    let out = crate::attention::attend_conditioned(&cfg, &q, &k, &v, &layout, &cams).map_err(|e| e.to_string())?;
    let swap = |t: &Tensor| -> Result<Tensor> {
        let a = t.slice(0, 0, tpi)?;
        let b = t.slice(0, tpi, 2 * tpi)?;
        Tensor::concat(&[b, a], 0)
    };
    let out_sw = crate::attention::attend_conditioned(
        &cfg,
        &swap(&q).map_err(|e| e.to_string())?,
        &swap(&k).map_err(|e| e.to_string())?,
        &swap(&v).map_err(|e| e.to_string())?,
        &layout,
        &[cams[1], cams[0]],
    )
    .map_err(|e| e.to_string())?;
    let expect = swap(&out).map_err(|e| e.to_string())?;
    let dev = max_abs_diff(out_sw.data(), expect.data());
    ok_if(dev < 1e-12, format!("permutation equivariance off by {dev}"))
}

fn attention_raymap_counter_test(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1045);
    let mut cams: Vec<Camera> = (0..2).map(|_| sample_camera(&mut rng)).collect();
    for c in cams.iter_mut() {
        c.width = 2;
        c.height = 2;
    }
    let g = sample_se3(&mut rng, 1.0);
    let moved = reanchor_world(&cams, &g);
    let proj_data: Vec<f64> = (0..6 * 8).map(|_| rng.normal(0.0, 1.0)).collect();
    let proj = Tensor::constant(&[6, 8], proj_data).map_err(|e| e.to_string())?;
    let tokens = |cs: &[Camera]| -> Result<Tensor> {
        let mut rows = Vec::new();
        for c in cs {
            rows.extend_from_slice(&naive_raymap(c, crate::camera::PixelConvention::Centers)?.values);
        }
        Tensor::constant(&[8, 6], rows)?.matmul(&proj)
    };
    let x1 = tokens(&cams).map_err(|e| e.to_string())?;
    let x2 = tokens(&moved).map_err(|e| e.to_string())?;
    let o1 = attend(&x1, &x1, &x1).map_err(|e| e.to_string())?;
    let o2 = attend(&x2, &x2, &x2).map_err(|e| e.to_string())?;
    let dev = max_abs_diff(o1.data(), o2.data());
    ok_if(
        dev > 1e-3,
        format!("unconditioned attention over raymap tokens should be frame-dependent, dev {dev}"),
    )
}

// ── model ───────────────────────────────────────────────────────────

fn check_model_config(scheme: &str) -> ModelConfig {
    let mut cfg = ModelConfig::with_scheme(scheme).expect("known scheme");
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.head_dim = 8;
    cfg.n_layers = 2;
    cfg
}

fn check_episode(seed: u64, n_ref: usize, n_tgt: usize) -> (Episode, Vec<Image>) {
    let spec = crate::synth::DatasetSpec {
        n_scenes: 1,
        views_per_scene: n_ref,
        n_targets: n_tgt,
        image_size: 8,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: crate::synth::ZoomMode::Fixed,
        split: crate::synth::Split::Train,
        seed,
        scene_params: None,
    };
    let ds = build_dataset(&spec).expect("valid spec");
    let scene = &ds.scenes[0];
    let targets: Vec<_> = scene.targets.iter().map(|(_, c)| *c).collect();
    let truths: Vec<_> = scene.targets.iter().map(|(img, _)| img.clone()).collect();
    (Episode::nvs(scene.references.clone(), targets), truths)
}

fn model_end_to_end_frame_invariance(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1050);
    let (episode, _) = check_episode(900, 2, 1);
    for scheme in ["cape", "gta", "prope"] {
        let model = Model::init(&check_model_config(scheme), &mut Rng::new(5)).map_err(|e| e.to_string())?;
        let base = model.forward_nvs(&episode).map_err(|e| e.to_string())?;
        for i in 0..10 {
            let g = sample_se3(&mut rng, 1.0);
            let mut moved = episode.clone();
            let cams: Vec<Camera> = moved.references.iter().map(|(_, c)| *c).collect();
            let newcams = reanchor_world(&cams, &g);
            for (j, (_, c)) in moved.references.iter_mut().enumerate() {
                *c = newcams[j];
            }
            moved.targets = reanchor_world(&moved.targets, &g);
            let out = model.forward_nvs(&moved).map_err(|e| e.to_string())?;
            let dev = max_abs_diff(&base[0].data, &out[0].data);
            if dev > 1e-8 {
                return fail(format!("{scheme} anchor {i}: model output moved by {dev}"));
            }
        }
    }
    // Counter-test: pluecker tokens are frame-dependent.
    let model = Model::init(&check_model_config("pluecker"), &mut Rng::new(5)).map_err(|e| e.to_string())?;
    let base = model.forward_nvs(&episode).map_err(|e| e.to_string())?;
    let g = sample_se3(&mut rng, 1.0);
    let mut moved = episode.clone();
    let cams: Vec<Camera> = moved.references.iter().map(|(_, c)| *c).collect();
    let newcams = reanchor_world(&cams, &g);
    for (j, (_, c)) in moved.references.iter_mut().enumerate() {
        *c = newcams[j];
    }
    moved.targets = reanchor_world(&moved.targets, &g);
    let out = model.forward_nvs(&moved).map_err(|e| e.to_string())?;
    let dev = max_abs_diff(&base[0].data, &out[0].data);
    ok_if(dev > 1e-3, format!("pluecker model should be frame-dependent, dev {dev}"))
}

fn model_parameter_parity(_: &Ctx) -> std::result::Result<(), String> {
    let schemes = ["naive", "pluecker", "camray", "cape", "gta", "prope", "prope+camray"];
    let counts: Vec<usize> = schemes
        .iter()
        .map(|s| {
            Model::init(&check_model_config(s), &mut Rng::new(0))
                .expect("valid config")
                .param_count()
        })
        .collect();
    ok_if(
        counts.iter().all(|&c| c == counts[0]),
        format!("parameter counts differ across schemes: {counts:?}"),
    )
}

fn model_training_determinism(_: &Ctx) -> std::result::Result<(), String> {
    let config = super::tests_support_tiny_config();
    let dataset = build_dataset(&config.train_data).map_err(|e| e.to_string())?;
    let a = train(&config, &dataset).map_err(|e| e.to_string())?;
    let b = train(&config, &dataset).map_err(|e| e.to_string())?;
    if a.loss_log != b.loss_log {
        return fail("loss logs differ between identical runs");
    }
    for ((_, t1), (_, t2)) in a.model.params().iter().zip(b.model.params().iter()) {
        if t1.data() != t2.data() {
            return fail("parameters differ between identical runs");
        }
    }
    Ok(())
}

fn model_descent(_: &Ctx) -> std::result::Result<(), String> {
    for seed in [0u64, 1, 2] {
        let mut config = super::tests_support_tiny_config();
        config.seed = seed;
        config.optim.steps = 1;
        config.optim.lr = 1e-4;
        let dataset = build_dataset(&config.train_data).map_err(|e| e.to_string())?;
        let outcome = train(&config, &dataset).map_err(|e| e.to_string())?;
        // Re-measure the first training episode's loss after one step.
        let mut data_rng = Rng::substream(seed, 1);
        let scene = &dataset.scenes[data_rng.index(dataset.scenes.len())];
        let refs = scene.references.clone();
        let targets: Vec<_> = scene.targets.iter().map(|(_, c)| *c).collect();
        let truths: Vec<_> = scene.targets.iter().map(|(img, _)| img.clone()).collect();
        let episode = Episode::nvs(refs, targets);
        let after = outcome.model.loss_nvs(&episode, &truths).map_err(|e| e.to_string())?.item();
        let before = outcome.loss_log[0].1;
        if after >= before {
            return fail(format!("seed {seed}: loss {before} -> {after} after one step"));
        }
    }
    Ok(())
}

fn model_gradient_check(_: &Ctx) -> std::result::Result<(), String> {
    let mut cfg = check_model_config("prope");
    cfg.image_size = 4;
    cfg.n_layers = 1;
    let mut model = Model::init(&cfg, &mut Rng::new(0)).map_err(|e| e.to_string())?;
    let spec = crate::synth::DatasetSpec {
        n_scenes: 1,
        views_per_scene: 1,
        n_targets: 1,
        image_size: 4,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: crate::synth::ZoomMode::Fixed,
        split: crate::synth::Split::Train,
        seed: 901,
        scene_params: None,
    };
    let ds = build_dataset(&spec).map_err(|e| e.to_string())?;
    let scene = &ds.scenes[0];
    let targets: Vec<_> = scene.targets.iter().map(|(_, c)| *c).collect();
    let truths: Vec<_> = scene.targets.iter().map(|(img, _)| img.clone()).collect();
    let episode = Episode::nvs(scene.references.clone(), targets);
    let err = grad_check_params(&mut model, |m| m.loss_nvs(&episode, &truths), 1e-4).map_err(|e| e.to_string())?;
    ok_if(err < 1e-5, format!("full-model gradient error {err}"))
}

// ── synth ───────────────────────────────────────────────────────────

fn synth_render_projection_consistency(_: &Ctx) -> std::result::Result<(), String> {
    let scene = Scene::generate(42, &SceneParams::default());
    let mut rng = Rng::new(1060);
    let spec = crate::synth::DatasetSpec {
        n_scenes: 1,
        views_per_scene: 3,
        n_targets: 0,
        image_size: 32,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: crate::synth::ZoomMode::Fixed,
        split: crate::synth::Split::Train,
        seed: 902,
        scene_params: None,
    };
    let cams = crate::synth::sample_cameras(&mut rng, 3, &spec).map_err(|e| e.to_string())?;
    for cam in &cams {
        let img = render(&scene, cam, crate::camera::PixelConvention::Centers).map_err(|e| e.to_string())?;
        let p = lift_projection(cam);
        for s in &scene.spheres {
            let (u, v, _) = crate::camera::project_point(&p, &s.center).map_err(|e| e.to_string())?;
            let px = ((u + 0.5) * 32.0 - 0.5).round();
            let py = ((v + 0.5) * 32.0 - 0.5).round();
            if !(0.0..32.0).contains(&px) || !(0.0..32.0).contains(&py) {
                continue;
            }
            if img.at(px as usize, py as usize) == &scene.background[..] {
                return fail("sphere center projected onto background");
            }
        }
    }
    Ok(())
}

fn synth_multiview_consistency(_: &Ctx) -> std::result::Result<(), String> {
    let scene = Scene::generate(43, &SceneParams::default());
    let mut rng = Rng::new(1061);
    let spec = crate::synth::DatasetSpec {
        n_scenes: 1,
        views_per_scene: 2,
        n_targets: 0,
        image_size: 16,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: crate::synth::ZoomMode::Fixed,
        split: crate::synth::Split::Train,
        seed: 903,
        scene_params: None,
    };
    let cams = crate::synth::sample_cameras(&mut rng, 2, &spec).map_err(|e| e.to_string())?;
    let g = sample_se3(&mut rng, 1.0);
    let moved_cams = reanchor_world(&cams, &g);
    let g_inv = g.inverse();
    let moved_scene = Scene {
        spheres: scene
            .spheres
            .iter()
            .map(|s| crate::synth::Sphere {
                center: g_inv.transform_point(&s.center),
                radius: s.radius,
                albedo: s.albedo,
            })
            .collect(),
        background: scene.background,
        light_dir: g_inv.rotation() * scene.light_dir,
        seed: scene.seed,
    };
    for (cam, moved_cam) in cams.iter().zip(&moved_cams) {
        let a = render(&scene, cam, crate::camera::PixelConvention::Centers).map_err(|e| e.to_string())?;
        let b = render(&moved_scene, moved_cam, crate::camera::PixelConvention::Centers).map_err(|e| e.to_string())?;
        let dev = max_abs_diff(&a.data, &b.data);
        if dev >= 1e-9 {
            return fail(format!("renders differ by {dev} under joint re-anchoring"));
        }
    }
    Ok(())
}

fn synth_image_range_and_regeneration(_: &Ctx) -> std::result::Result<(), String> {
    let spec = crate::synth::DatasetSpec {
        n_scenes: 2,
        views_per_scene: 2,
        n_targets: 1,
        image_size: 16,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: crate::synth::ZoomMode::UniformZoom { min: 1.0, max: 3.0 },
        split: crate::synth::Split::Train,
        seed: 904,
        scene_params: None,
    };
    let a = build_dataset(&spec).map_err(|e| e.to_string())?;
    let b = build_dataset(&spec).map_err(|e| e.to_string())?;
    for (sa, sb) in a.scenes.iter().zip(&b.scenes) {
        for ((ia, _), (ib, _)) in sa.references.iter().zip(&sb.references) {
            if ia.data != ib.data {
                return fail("dataset regeneration differs");
            }
            if ia.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return fail("pixel outside [0, 1]");
            }
        }
    }
    Ok(())
}

// ── metrics ─────────────────────────────────────────────────────────

fn metrics_psnr_monotonicity(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1070);
    let truth = Image::constant(16, 16, [0.5, 0.5, 0.5]);
    let mut prev = f64::INFINITY;
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let mut noisy = truth.clone();
        for v in noisy.data.iter_mut() {
            *v = (*v + rng.normal(0.0, sigma)).clamp(0.0, 1.0);
        }
        let p = psnr(&noisy, &truth).map_err(|e| e.to_string())?;
        if p >= prev {
            return fail(format!("psnr rose from {prev} to {p} as noise grew"));
        }
        prev = p;
    }
    Ok(())
}

fn metrics_accuracy_chance(_: &Ctx) -> std::result::Result<(), String> {
    let mut rng = Rng::new(1071);
    let n_classes = 5;
    let trials = 10_000;
    let mut preds = Vec::with_capacity(trials);
    let mut labels = Vec::with_capacity(trials);
    for _ in 0..trials {
        preds.push((0..n_classes).map(|_| rng.unit()).collect::<Vec<f64>>());
        labels.push(rng.index(n_classes));
    }
    let acc = accuracy(&preds, &labels).map_err(|e| e.to_string())?;
    let p = 1.0 / n_classes as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    ok_if(
        (acc - p).abs() < 3.0 * sigma,
        format!("random accuracy {acc} outside 3 sigma of {p}"),
    )
}

fn eval_smoke(_: &Ctx) -> std::result::Result<(), String> {
    // A freshly initialized model evaluates under every condition type.
    let config = super::tests_support_tiny_config();
    let mut spec = config.test_data.clone();
    spec.views_per_scene = 4;
    let dataset = build_dataset(&spec).map_err(|e| e.to_string())?;
    let model = Model::init(&config.model, &mut Rng::new(0)).map_err(|e| e.to_string())?;
    for condition in [Condition::Standard, Condition::Views(2), Condition::Zoom(2.0)] {
        evaluate(&model, &dataset, condition, Task::Nvs, 0).map_err(|e| e.to_string())?;
    }
    Ok(())
}

const PROPERTIES: &[(&str, Check)] = &[
    ("tensor/gradient-checks", tensor_grad_checks),
    ("tensor/softmax-normalization", tensor_softmax_normalization),
    ("tensor/determinism", tensor_determinism),
    ("camera/lift-invert-residual", camera_lift_invert_residual),
    ("camera/relative-self-identity", camera_relative_self_identity),
    ("camera/relative-reanchor-invariance", camera_relative_reanchor_invariance),
    ("camera/identity-intrinsics-reduction", camera_identity_intrinsics_reduction),
    ("camera/ray-round-trip", camera_ray_round_trip),
    ("raymap/frame-dependence", raymap_frame_dependence),
    ("raymap/pluecker-origin-slide", raymap_pluecker_origin_slide),
    ("raymap/unit-directions", raymap_unit_directions),
    ("encoding/relative-frame-invariance", encoding_relative_frame_invariance),
    ("encoding/dense-oracle", encoding_dense_oracle),
    ("encoding/inverse-round-trip", encoding_inverse_round_trip),
    ("encoding/rope-orthogonality", encoding_rope_orthogonality_and_rigidity),
    ("encoding/prope-gta-agreement", encoding_prope_gta_agreement),
    ("attention/frame-invariance", attention_frame_invariance),
    ("attention/score-normalization", attention_score_rows_sum_to_one),
    ("attention/gradient-checks", attention_grad_checks),
    ("attention/reduction-chain", attention_reduction_chain),
    ("attention/permutation-equivariance", attention_permutation_equivariance),
    ("attention/raymap-counter-test", attention_raymap_counter_test),
    ("model/end-to-end-frame-invariance", model_end_to_end_frame_invariance),
    ("model/parameter-parity", model_parameter_parity),
    ("model/training-determinism", model_training_determinism),
    ("model/descent", model_descent),
    ("model/gradient-check", model_gradient_check),
    ("synth/render-projection-consistency", synth_render_projection_consistency),
    ("synth/multiview-consistency", synth_multiview_consistency),
    ("synth/image-range-and-regeneration", synth_image_range_and_regeneration),
    ("metrics/psnr-monotonicity", metrics_psnr_monotonicity),
    ("metrics/accuracy-chance", metrics_accuracy_chance),
    ("harness/eval-conditions", eval_smoke),
];

/// Run the whole property suite, printing one status line per property.
pub fn cmd_check(mutation: Mutation) -> Result<Vec<PropertyResult>> {
    let ctx = Ctx { mutation };
    let mut results = Vec::with_capacity(PROPERTIES.len());
    let mut failures = 0;
    for (name, check) in PROPERTIES {
        let started = Instant::now();
        let outcome = check(&ctx);
        let millis = started.elapsed().as_millis();
        match &outcome {
            Ok(()) => println!("PASS {name} ({millis} ms)"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name} ({millis} ms): {msg}");
            }
        }
        results.push(PropertyResult {
            name,
            outcome,
            millis,
        });
    }
    println!(
        "{} properties, {} passed, {} failed",
        results.len(),
        results.len() - failures,
        failures
    );
    if failures > 0 {
        return Err(Error::Property(format!("{failures} properties failed")));
    }
    Ok(results)
}

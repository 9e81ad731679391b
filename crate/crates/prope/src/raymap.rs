//! Pixel-aligned raymaps: token-level camera encodings.
//!
//! Three kinds:
//! - `Naive`: per-pixel `[origin, direction]`, 6 channels. The origin is the
//!   camera center, constant across pixels.
//! - `Pluecker`: `[origin x direction, direction]`, 6 channels; the moment
//!   term makes the encoding invariant to sliding the origin along the ray.
//! - `CamRay`: the camera-frame ray direction `normalize(K^-1 (u,v,1))`,
//!   3 channels. Depends only on intrinsics and the pixel grid, so it can be
//!   combined with relative attention encodings without breaking global
//!   frame invariance.
//!
//! Naive and Plücker maps are absolute: they change when the world frame is
//! redefined. CamRay does not.

use crate::camera::{camera_origin, lift_projection, ray_direction, Camera, PixelConvention, Vec3};
use crate::error::Result;

pub const RAYMAP_CHANNEL_BUDGET: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaymapKind {
    Naive,
    Pluecker,
    CamRay,
}

impl RaymapKind {
    pub fn channels(self) -> usize {
        match self {
            RaymapKind::Naive | RaymapKind::Pluecker => 6,
            RaymapKind::CamRay => 3,
        }
    }
}

/// Per-pixel (or per-patch) float vectors over an image grid.
#[derive(Clone, Debug)]
pub struct Raymap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub kind: RaymapKind,
    /// Row-major `[y][x][channel]`.
    pub values: Vec<f64>,
}

impl Raymap {
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.values[i..i + self.channels]
    }
}

/// Per-pixel `[origin, direction]` raymap.
pub fn naive_raymap(cam: &Camera, conv: PixelConvention) -> Result<Raymap> {
    let p = lift_projection(cam);
    let o = camera_origin(&cam.extrinsics);
    let mut values = Vec::with_capacity(cam.width * cam.height * 6);
    for y in 0..cam.height {
        let v = conv.coord(y, cam.height);
        for x in 0..cam.width {
            let u = conv.coord(x, cam.width);
            let d = ray_direction(&p, u, v)?;
            values.extend_from_slice(&[o.x, o.y, o.z, d.x, d.y, d.z]);
        }
    }
    Ok(Raymap {
        width: cam.width,
        height: cam.height,
        channels: 6,
        kind: RaymapKind::Naive,
        values,
    })
}

/// Per-pixel `[moment, direction]` raymap with moment = origin x direction.
pub fn pluecker_raymap(cam: &Camera, conv: PixelConvention) -> Result<Raymap> {
    let p = lift_projection(cam);
    let o = camera_origin(&cam.extrinsics);
    let mut values = Vec::with_capacity(cam.width * cam.height * 6);
    for y in 0..cam.height {
        let v = conv.coord(y, cam.height);
        for x in 0..cam.width {
            let u = conv.coord(x, cam.width);
            let d = ray_direction(&p, u, v)?;
            let m = o.cross(&d);
            values.extend_from_slice(&[m.x, m.y, m.z, d.x, d.y, d.z]);
        }
    }
    Ok(Raymap {
        width: cam.width,
        height: cam.height,
        channels: 6,
        kind: RaymapKind::Pluecker,
        values,
    })
}

/// Camera-frame ray directions `normalize(K^-1 (u,v,1))`; independent of
/// extrinsics by construction.
pub fn camray_raymap(cam: &Camera, conv: PixelConvention) -> Result<Raymap> {
    let k_inv = cam.intrinsics.inverse_matrix();
    let mut values = Vec::with_capacity(cam.width * cam.height * 3);
    for y in 0..cam.height {
        let v = conv.coord(y, cam.height);
        for x in 0..cam.width {
            let u = conv.coord(x, cam.width);
            let d = (k_inv * Vec3::new(u, v, 1.0)).normalize();
            values.extend_from_slice(&[d.x, d.y, d.z]);
        }
    }
    Ok(Raymap {
        width: cam.width,
        height: cam.height,
        channels: 3,
        kind: RaymapKind::CamRay,
        values,
    })
}

pub fn build_raymap(kind: RaymapKind, cam: &Camera, conv: PixelConvention) -> Result<Raymap> {
    match kind {
        RaymapKind::Naive => naive_raymap(cam, conv),
        RaymapKind::Pluecker => pluecker_raymap(cam, conv),
        RaymapKind::CamRay => camray_raymap(cam, conv),
    }
}

/// Raymap at patch resolution: one vector per patch, with the direction
/// averaged over the patch's pixel centers and re-normalized, and any
/// origin/moment channel recomputed from the averaged direction.
pub fn patch_raymap(kind: RaymapKind, cam: &Camera, patch_size: usize, conv: PixelConvention) -> Result<Raymap> {
    let pixel_map = build_raymap(kind, cam, conv)?;
    let grid_w = cam.width / patch_size;
    let grid_h = cam.height / patch_size;
    let o = camera_origin(&cam.extrinsics);
    let mut values = Vec::with_capacity(grid_w * grid_h * pixel_map.channels);
    for py in 0..grid_h {
        for px in 0..grid_w {
            let mut avg = Vec3::zeros();
            for dy in 0..patch_size {
                for dx in 0..patch_size {
                    let v = pixel_map.at(px * patch_size + dx, py * patch_size + dy);
                    let dir = &v[v.len() - 3..];
                    avg += Vec3::new(dir[0], dir[1], dir[2]);
                }
            }
            let d = avg.normalize();
            match kind {
                RaymapKind::Naive => values.extend_from_slice(&[o.x, o.y, o.z, d.x, d.y, d.z]),
                RaymapKind::Pluecker => {
                    let m = o.cross(&d);
                    values.extend_from_slice(&[m.x, m.y, m.z, d.x, d.y, d.z]);
                }
                RaymapKind::CamRay => values.extend_from_slice(&[d.x, d.y, d.z]),
            }
        }
    }
    Ok(Raymap {
        width: grid_w,
        height: grid_h,
        channels: pixel_map.channels,
        kind,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::test_support::{random_camera, random_se3};
    use crate::camera::{reanchor_world, Intrinsics, SE3};
    use crate::tensor::Rng;

    const CONV: PixelConvention = PixelConvention::Centers;

    fn center_pixel_map(cam: &Camera, kind: RaymapKind) -> Vec<f64> {
        // Odd image size puts a pixel center exactly on the optical axis.
        assert_eq!(cam.width % 2, 1);
        build_raymap(kind, cam, CONV).unwrap().at(cam.width / 2, cam.height / 2).to_vec()
    }

    #[test]
    fn naive_identity_camera_center_pixel() {
        let cam = Camera::identity(9, 9);
        let v = center_pixel_map(&cam, RaymapKind::Naive);
        let expected = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in v.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn naive_origin_channels_constant() {
        let mut rng = Rng::new(21);
        let cam = random_camera(&mut rng);
        let map = naive_raymap(&cam, CONV).unwrap();
        let o = camera_origin(&cam.extrinsics);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let v = map.at(x, y);
                assert!((v[0] - o.x).abs() < 1e-15 && (v[1] - o.y).abs() < 1e-15 && (v[2] - o.z).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn naive_changes_under_reanchoring() {
        let mut rng = Rng::new(22);
        let cam = random_camera(&mut rng);
        let g = random_se3(&mut rng, 1.0);
        let moved = reanchor_world(&[cam], &g)[0];
        let a = naive_raymap(&cam, CONV).unwrap();
        let b = naive_raymap(&moved, CONV).unwrap();
        let max_dev = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_dev > 1e-3, "naive raymap should be frame-dependent, dev {max_dev}");
    }

    #[test]
    fn pluecker_moment_cross_product() {
        // Camera center at (1,0,0) looking down +z: center ray has
        // direction (0,0,1) and moment (1,0,0) x (0,0,1) = (0,-1,0).
        let extr = SE3::new(crate::camera::Mat3::identity(), Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        let cam = Camera::new(Intrinsics::identity(), extr, 9, 9).unwrap();
        let v = center_pixel_map(&cam, RaymapKind::Pluecker);
        let expected = [0.0, -1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in v.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn pluecker_identity_camera_center_pixel_zero_moment() {
        let cam = Camera::identity(9, 9);
        let v = center_pixel_map(&cam, RaymapKind::Pluecker);
        let expected = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in v.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn pluecker_invariant_to_origin_slide() {
        let mut rng = Rng::new(23);
        let cam = random_camera(&mut rng);
        let map = pluecker_raymap(&cam, CONV).unwrap();
        let o = camera_origin(&cam.extrinsics);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let v = map.at(x, y);
                let d = Vec3::new(v[3], v[4], v[5]);
                let slid = (o + d * 3.7).cross(&d);
                assert!((slid.x - v[0]).abs() < 1e-12);
                assert!((slid.y - v[1]).abs() < 1e-12);
                assert!((slid.z - v[2]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn camray_independent_of_extrinsics_bitwise() {
        let mut rng = Rng::new(24);
        let cam1 = random_camera(&mut rng);
        let mut cam2 = cam1;
        cam2.extrinsics = random_se3(&mut rng, 1.0);
        let a = camray_raymap(&cam1, CONV).unwrap();
        let b = camray_raymap(&cam2, CONV).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn camray_identity_intrinsics_center_pixel() {
        let mut rng = Rng::new(25);
        let mut cam = Camera::identity(9, 9);
        cam.extrinsics = random_se3(&mut rng, 1.0);
        let v = center_pixel_map(&cam, RaymapKind::CamRay);
        assert!((v[0]).abs() < 1e-12 && (v[1]).abs() < 1e-12 && (v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn camray_focal_halves_tangent() {
        let base = Camera::new(Intrinsics::from_focal(1.0, 1.0).unwrap(), SE3::identity(), 9, 9).unwrap();
        let zoomed = Camera::new(Intrinsics::from_focal(2.0, 2.0).unwrap(), SE3::identity(), 9, 9).unwrap();
        let a = camray_raymap(&base, CONV).unwrap();
        let b = camray_raymap(&zoomed, CONV).unwrap();
        // Off-center pixel: tan(angle) = d_x / d_z from K^-1 (u,v,1).
        let va = a.at(7, 4);
        let vb = b.at(7, 4);
        let tan_a = va[0] / va[2];
        let tan_b = vb[0] / vb[2];
        assert!((tan_a - 2.0 * tan_b).abs() < 1e-12, "{tan_a} vs {tan_b}");
    }

    #[test]
    fn direction_channels_unit_norm_and_moment_orthogonal() {
        let mut rng = Rng::new(26);
        for _ in 0..5 {
            let cam = random_camera(&mut rng);
            for kind in [RaymapKind::Naive, RaymapKind::Pluecker, RaymapKind::CamRay] {
                let map = build_raymap(kind, &cam, CONV).unwrap();
                for y in 0..map.height {
                    for x in 0..map.width {
                        let v = map.at(x, y);
                        let d = &v[v.len() - 3..];
                        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                        assert!((norm - 1.0).abs() < 1e-9);
                        if kind == RaymapKind::Pluecker {
                            let dot = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
                            assert!(dot.abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn patch_raymap_grid_and_norms() {
        let mut rng = Rng::new(27);
        let cam = random_camera(&mut rng); // 32x32
        for kind in [RaymapKind::Naive, RaymapKind::Pluecker, RaymapKind::CamRay] {
            let map = patch_raymap(kind, &cam, 4, CONV).unwrap();
            assert_eq!((map.width, map.height), (8, 8));
            for y in 0..map.height {
                for x in 0..map.width {
                    let v = map.at(x, y);
                    let d = &v[v.len() - 3..];
                    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    assert!((norm - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

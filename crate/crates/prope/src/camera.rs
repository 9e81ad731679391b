//! Pinhole cameras and projective-matrix algebra.
//!
//! A camera is an intrinsics matrix `K` plus a world-to-camera rigid
//! transform `T`. Lifting the 3x4 world-to-image projection `[K|0]·T` with a
//! bottom row (0,0,0,1) gives an invertible 4x4 matrix that maps world space
//! to the camera's projective image space; the product `P1 · P2^-1` of two
//! lifted projections is the relative transform between two camera frustums.
//!
//! Intrinsics are expressed in normalized image units: focal lengths are
//! O(1) and the principal point sits near 0, so lifted matrices stay well
//! conditioned when their entries multiply feature channels. Telephoto-like
//! focal lengths trip a condition-number warning rather than an error.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Vec3 = Vector3<f64>;

/// Orthonormality / determinant tolerance for SE(3) validation.
const SE3_TOL: f64 = 1e-12;

/// cond(P) above which `lift_projection` warns.
const COND_WARN: f64 = 1e4;

/// Where inside a pixel rays are cast. The paper's pixel coordinates leave
/// this unstated; `Centers` (offset 0.5) is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelConvention {
    Centers,
    Corners,
}

impl Default for PixelConvention {
    fn default() -> Self {
        PixelConvention::Centers
    }
}

impl PixelConvention {
    fn offset(self) -> f64 {
        match self {
            PixelConvention::Centers => 0.5,
            PixelConvention::Corners => 0.0,
        }
    }

    /// Normalized image coordinate of pixel index `i` out of `extent`,
    /// in [-0.5, 0.5).
    pub fn coord(self, i: usize, extent: usize) -> f64 {
        (i as f64 + self.offset()) / extent as f64 - 0.5
    }
}

/// Pinhole intrinsics in normalized image units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Intrinsics> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Config(format!("focal lengths must be positive and finite, got fx={fx}, fy={fy}")));
        }
        if !(cx.is_finite() && cy.is_finite() && skew.is_finite()) {
            return Err(Error::Config("non-finite principal point or skew".into()));
        }
        Ok(Intrinsics { fx, fy, cx, cy, skew })
    }

    /// Centered principal point, no skew.
    pub fn from_focal(fx: f64, fy: f64) -> Result<Intrinsics> {
        Intrinsics::new(fx, fy, 0.0, 0.0, 0.0)
    }

    pub fn identity() -> Intrinsics {
        Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            skew: 0.0,
        }
    }

    /// Multiply both focal lengths by a zoom factor.
    pub fn zoomed(&self, zoom: f64) -> Result<Intrinsics> {
        Intrinsics::new(self.fx * zoom, self.fy * zoom, self.cx, self.cy, self.skew)
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of the upper-triangular K.
    pub fn inverse_matrix(&self) -> Mat3 {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Mat3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Rigid world-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SE3 {
    rotation: Mat3,
    translation: Vec3,
}

impl SE3 {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<SE3> {
        let drift = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if drift > SE3_TOL {
            return Err(Error::Config(format!("rotation not orthonormal (drift {drift:.3e})")));
        }
        if (rotation.determinant() - 1.0).abs() > SE3_TOL {
            return Err(Error::Config(format!("rotation determinant {} != +1", rotation.determinant())));
        }
        Ok(SE3 { rotation, translation })
    }

    pub fn identity() -> SE3 {
        SE3 {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Composition `self · other` as homogeneous matrices: first apply
    /// `other`, then `self`.
    pub fn compose(&self, other: &SE3) -> SE3 {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let drift = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let rotation = if drift > SE3_TOL { orthonormalize(&rotation) } else { rotation };
        SE3 { rotation, translation }
    }

    pub fn inverse(&self) -> SE3 {
        let rt = self.rotation.transpose();
        SE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn matrix4(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Apply to a world point.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Gram-Schmidt on rows; used only when accumulated drift is detectable.
fn orthonormalize(m: &Mat3) -> Mat3 {
    let r0 = m.row(0).transpose().normalize();
    let r1 = (m.row(1).transpose() - r0 * r0.dot(&m.row(1).transpose())).normalize();
    let r2 = r0.cross(&r1);
    Mat3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()])
}

/// A posed pinhole camera with an image resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: SE3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: SE3, width: usize, height: usize) -> Result<Camera> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("image size {width}x{height} must be at least 1x1")));
        }
        Ok(Camera {
            intrinsics,
            extrinsics,
            width,
            height,
        })
    }

    pub fn identity(width: usize, height: usize) -> Camera {
        Camera {
            intrinsics: Intrinsics::identity(),
            extrinsics: SE3::identity(),
            width,
            height,
        }
    }

    pub fn origin(&self) -> Vec3 {
        camera_origin(&self.extrinsics)
    }
}

/// Invertible 4x4 lifted projection with bottom row (0,0,0,1).
///
/// The inverse is carried alongside, computed in closed form from the K and
/// T blocks rather than by generic elimination.
#[derive(Clone, Copy, Debug)]
pub struct LiftedProjection {
    m: Mat4,
    inv: Mat4,
}

impl LiftedProjection {
    pub fn matrix(&self) -> &Mat4 {
        &self.m
    }

    pub fn inverse_matrix(&self) -> &Mat4 {
        &self.inv
    }
}

/// Lift a camera's world-to-image projection to an invertible 4x4 matrix.
///
/// Warns (via `log`) when the condition number estimate exceeds 1e4, which
/// happens for telephoto-like focal lengths.
pub fn lift_projection(cam: &Camera) -> LiftedProjection {
    let k = cam.intrinsics.matrix();
    let r = cam.extrinsics.rotation();
    let t = cam.extrinsics.translation();
    let m3 = k * r;
    let p3 = k * t;

    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&m3);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p3);

    // Closed-form inverse: M^-1 = R^T K^-1, translation column -R^T t.
    let k_inv = cam.intrinsics.inverse_matrix();
    let m3_inv = r.transpose() * k_inv;
    let p3_inv = -(r.transpose() * t);
    let mut inv = Mat4::identity();
    inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&m3_inv);
    inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&p3_inv);

    let lifted = LiftedProjection { m, inv };
    let cond = condition_estimate(&lifted);
    if cond > COND_WARN {
        log::warn!("lifted projection is ill-conditioned (cond ~ {cond:.3e}); expect conditioning issues in attention");
    }
    lifted
}

/// Closed-form inverse of a lifted projection, as a lifted projection.
///
/// `cam` must be the camera that produced `p`; the inverse is rebuilt from
/// its K and T blocks.
pub fn invert_lifted(p: &LiftedProjection, cam: &Camera) -> Result<LiftedProjection> {
    let fx = cam.intrinsics.fx;
    let fy = cam.intrinsics.fy;
    if fx.abs() < 1e-15 || fy.abs() < 1e-15 {
        return Err(Error::Singular(format!("degenerate intrinsics fx={fx}, fy={fy}")));
    }
    let _ = p;
    let relifted = lift_projection(cam);
    Ok(LiftedProjection {
        m: relifted.inv,
        inv: relifted.m,
    })
}

/// Power-iteration estimate of cond(P) = sigma_max(P) * sigma_max(P^-1).
fn condition_estimate(p: &LiftedProjection) -> f64 {
    spectral_norm(&p.m) * spectral_norm(&p.inv)
}

fn spectral_norm(m: &Mat4) -> f64 {
    let a = m.transpose() * m;
    let mut v = Vector4::new(1.0, 0.9, 0.8, 0.7).normalize();
    for _ in 0..48 {
        let w = a * v;
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = w / n;
    }
    (v.dot(&(a * v))).max(0.0).sqrt()
}

/// Project a world point; returns normalized image coordinates and the
/// pre-division depth (the third homogeneous component).
pub fn project_point(p: &LiftedProjection, x_world: &Vec3) -> Result<(f64, f64, f64)> {
    let y = p.m * Vector4::new(x_world.x, x_world.y, x_world.z, 1.0);
    let depth = y.z;
    if depth.abs() < 1e-12 {
        return Err(Error::Degenerate(format!("point {x_world:?} lies on the camera plane")));
    }
    Ok((y.x / depth, y.y / depth, depth))
}

/// Unit ray direction (world frame) through normalized image point (u, v).
///
/// Applies the lifted inverse to (u,v,1,1) and takes the direction from the
/// camera center to the resulting point, with the sign fixed so the ray
/// exits the camera forward.
pub fn ray_direction(p: &LiftedProjection, u: f64, v: f64) -> Result<Vec3> {
    let z = p.inv * Vector4::new(u, v, 1.0, 1.0);
    // The last column of the lifted inverse holds the camera center.
    let origin = Vec3::new(p.inv[(0, 3)], p.inv[(1, 3)], p.inv[(2, 3)]);
    let raw = Vec3::new(z.x, z.y, z.z) - origin;
    let norm = raw.norm();
    if norm < 1e-15 || !norm.is_finite() {
        return Err(Error::Degenerate(format!("zero-length ray direction at ({u}, {v})")));
    }
    let mut d = raw / norm;
    // Forward check: a point one unit along the ray must have positive depth.
    let probe = origin + d;
    let y = p.m * Vector4::new(probe.x, probe.y, probe.z, 1.0);
    if y.z < 0.0 {
        d = -d;
    }
    Ok(d)
}

/// Camera center in world coordinates: -R^T t.
pub fn camera_origin(e: &SE3) -> Vec3 {
    -(e.rotation().transpose() * e.translation())
}

/// Relative transform between the projective spaces of two cameras:
/// `P1 · P2^-1`. Identity when both cameras coincide; independent of how
/// the world frame is chosen.
pub fn relative_projection(p1: &LiftedProjection, p2: &LiftedProjection) -> Mat4 {
    p1.m * p2.inv
}

/// Redefine the world frame: right-compose every extrinsics with `g`.
pub fn reanchor_world(cams: &[Camera], g: &SE3) -> Vec<Camera> {
    cams.iter()
        .map(|c| Camera {
            intrinsics: c.intrinsics,
            extrinsics: c.extrinsics.compose(g),
            width: c.width,
            height: c.height,
        })
        .collect()
}

/// Rotation from a uniform random axis and an angle in [0, pi).
pub fn sample_rotation(rng: &mut crate::tensor::Rng) -> Mat3 {
    let axis = rng.unit_sphere();
    let angle = rng.uniform(0.0, std::f64::consts::PI);
    let axis = nalgebra::Unit::new_normalize(Vec3::new(axis[0], axis[1], axis[2]));
    *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()
}

/// Random rigid transform: sampled rotation plus normal translation.
pub fn sample_se3(rng: &mut crate::tensor::Rng, translation_scale: f64) -> SE3 {
    let r = sample_rotation(rng);
    let t = Vec3::new(
        rng.normal(0.0, translation_scale),
        rng.normal(0.0, translation_scale),
        rng.normal(0.0, translation_scale),
    );
    SE3::new(r, t).expect("sampled rotation is orthonormal")
}

/// Random 32x32 camera with focal lengths in [0.5, 4] and a near-centered
/// principal point; the workhorse of the invariance suites.
pub fn sample_camera(rng: &mut crate::tensor::Rng) -> Camera {
    let fx = rng.uniform(0.5, 4.0);
    let fy = rng.uniform(0.5, 4.0);
    let cx = rng.uniform(-0.05, 0.05);
    let cy = rng.uniform(-0.05, 0.05);
    let intr = Intrinsics::new(fx, fy, cx, cy, 0.0).expect("positive focals");
    Camera::new(intr, sample_se3(rng, 1.0), 32, 32).expect("valid size")
}

#[cfg(test)]
pub(crate) mod test_support {
    pub use super::{sample_camera as random_camera, sample_se3 as random_se3};
}

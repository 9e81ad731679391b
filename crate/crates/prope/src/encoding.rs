//! Per-token block-diagonal transforms for relative camera conditioning.
//!
//! Each scheme assigns token `t` a block-diagonal matrix `D_t` built from
//! the camera of the image the token belongs to and the token's patch
//! coordinates:
//!
//! - CaPE: `D_t = I_{d/4} ⊗ T_{i(t)}`, the homogeneous world-to-camera
//!   SE(3) matrix repeated down the diagonal.
//! - GTA: first half `I_{d/8} ⊗ T_{i(t)}`, second half 2D RoPE rotations on
//!   the patch coordinates. Equivalently PRoPE with identity intrinsics.
//! - PRoPE: first half `I_{d/8} ⊗ P_{i(t)}` where `P` is the lifted
//!   projection (so intrinsics are encoded), second half the same RoPE
//!   split: `RoPE_{d/4}(x_t) ⊕ RoPE_{d/4}(y_t)`.
//!
//! Attention applies these through the batched per-row operator [`BlockDiagonalTransform::apply`]
//! without materializing any `d x d` matrix; `dense_matrix` exists for
//! oracle tests. The relative quantity `D_{t1} · D_{t2}^{-1}` that attention
//! realizes is invariant to redefining the world frame.

use std::rc::Rc;

use crate::camera::{lift_projection, Camera, Mat4};
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

/// Token role within an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Reference,
    Target,
}

/// One entry per token: owning image, patch coordinates, role.
#[derive(Clone, Copy, Debug)]
pub struct TokenInfo {
    pub image: usize,
    pub x: usize,
    pub y: usize,
    pub role: Role,
}

/// Maps token index to image index, patch coordinates, and role. Tokens of
/// one image are contiguous, in row-major patch order.
#[derive(Clone, Debug)]
pub struct TokenLayout {
    entries: Vec<TokenInfo>,
    tokens_per_image: usize,
}

impl TokenLayout {
    /// Grid layout: every image contributes `grid_w * grid_h` tokens in
    /// row-major order; `roles[i]` is the role of image `i`.
    pub fn grid(grid_w: usize, grid_h: usize, roles: &[Role]) -> TokenLayout {
        let mut entries = Vec::with_capacity(roles.len() * grid_w * grid_h);
        for (image, &role) in roles.iter().enumerate() {
            for y in 0..grid_h {
                for x in 0..grid_w {
                    entries.push(TokenInfo { image, x, y, role });
                }
            }
        }
        TokenLayout {
            entries,
            tokens_per_image: grid_w * grid_h,
        }
    }

    pub fn token_count(&self) -> usize {
        self.entries.len()
    }

    pub fn tokens_per_image(&self) -> usize {
        self.tokens_per_image
    }

    pub fn entries(&self) -> &[TokenInfo] {
        &self.entries
    }

    pub fn n_images(&self) -> usize {
        self.entries.last().map(|e| e.image + 1).unwrap_or(0)
    }
}

/// RoPE frequency schedule: theta_k = base^(-2k/dim), angle = pos * scale * theta_k.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RopeParams {
    pub base: f64,
    pub coord_scale: f64,
}

impl Default for RopeParams {
    fn default() -> Self {
        RopeParams {
            base: 10000.0,
            coord_scale: 1.0,
        }
    }
}

/// Dense `dim x dim` rotary matrix for a scalar position: block-diagonal
/// 2x2 rotations by `pos * theta_k`.
pub fn rope_block(pos: f64, dim: usize, params: &RopeParams) -> Result<Vec<f64>> {
    let pairs = rope_pairs(pos, dim, params)?;
    let mut m = vec![0.0; dim * dim];
    for (k, (c, s)) in pairs.iter().enumerate() {
        let i = 2 * k;
        m[i * dim + i] = *c;
        m[i * dim + i + 1] = -*s;
        m[(i + 1) * dim + i] = *s;
        m[(i + 1) * dim + i + 1] = *c;
    }
    Ok(m)
}

/// (cos, sin) for each of the dim/2 rotation pairs.
fn rope_pairs(pos: f64, dim: usize, params: &RopeParams) -> Result<Vec<(f64, f64)>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("rope dimension {dim} must be even and positive")));
    }
    let mut pairs = Vec::with_capacity(dim / 2);
    for k in 0..dim / 2 {
        let theta = params.base.powf(-2.0 * k as f64 / dim as f64);
        let angle = pos * params.coord_scale * theta;
        pairs.push((angle.cos(), angle.sin()));
    }
    Ok(pairs)
}

/// One diagonal block of a `D_t`.
#[derive(Clone, Copy, Debug)]
pub enum Block {
    /// 4x4 block with a precomputed closed-form inverse.
    Mat { m: Mat4, inv: Mat4 },
    /// 2x2 rotation; inverse equals transpose.
    Rot { cos: f64, sin: f64 },
}

impl Block {
    fn size(&self) -> usize {
        match self {
            Block::Mat { .. } => 4,
            Block::Rot { .. } => 2,
        }
    }
}

/// How to apply a transform (or its adjoints) to token rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplyMode {
    Plain,
    Transpose,
    Inverse,
    InverseTranspose,
}

impl ApplyMode {
    /// Mode whose application is the adjoint (matrix transpose) of `self`;
    /// this is what the backward pass applies to the output gradient.
    fn adjoint(self) -> ApplyMode {
        match self {
            ApplyMode::Plain => ApplyMode::Transpose,
            ApplyMode::Transpose => ApplyMode::Plain,
            ApplyMode::Inverse => ApplyMode::InverseTranspose,
            ApplyMode::InverseTranspose => ApplyMode::Inverse,
        }
    }
}

#[derive(Clone)]
struct TransformData {
    dim: usize,
    /// blocks[t] lists the diagonal blocks of token t, sizes summing to dim.
    blocks: Vec<Vec<Block>>,
}

/// Per-token block-diagonal matrices `D_t`, stored as small blocks and
/// applied row-wise without densifying. Cheap to clone.
#[derive(Clone)]
pub struct BlockDiagonalTransform {
    data: Rc<TransformData>,
}

impl std::fmt::Debug for BlockDiagonalTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockDiagonalTransform")
            .field("dim", &self.data.dim)
            .field("tokens", &self.data.blocks.len())
            .finish()
    }
}

impl BlockDiagonalTransform {
    fn new(dim: usize, blocks: Vec<Vec<Block>>) -> BlockDiagonalTransform {
        debug_assert!(blocks.iter().all(|b| b.iter().map(Block::size).sum::<usize>() == dim));
        BlockDiagonalTransform {
            data: Rc::new(TransformData { dim, blocks }),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    pub fn token_count(&self) -> usize {
        self.data.blocks.len()
    }

    /// Apply `D_t` (per `mode`) to row `t` of `x`, differentiably in `x`.
    /// The transform itself is treated as a constant.
    pub fn apply(&self, x: &Tensor, mode: ApplyMode) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        if shape.len() != 2 || shape[0] != self.token_count() || shape[1] != self.data.dim {
            return Err(Error::dim("blockdiag_apply", &shape, &[self.token_count(), self.data.dim]));
        }
        let data = self.apply_raw(x.data(), mode);
        Tensor::from_custom_op(
            &shape,
            data,
            Box::new(ApplyOp {
                transform: self.clone(),
                x: x.clone(),
                mode,
            }),
        )
    }

    fn apply_raw(&self, x: &[f64], mode: ApplyMode) -> Vec<f64> {
        let d = self.data.dim;
        let mut out = vec![0.0; x.len()];
        for (t, blocks) in self.data.blocks.iter().enumerate() {
            let row = &x[t * d..(t + 1) * d];
            let out_row = &mut out[t * d..(t + 1) * d];
            let mut off = 0;
            for b in blocks {
                match b {
                    Block::Mat { m, inv } => {
                        let mat = match mode {
                            ApplyMode::Plain => *m,
                            ApplyMode::Transpose => m.transpose(),
                            ApplyMode::Inverse => *inv,
                            ApplyMode::InverseTranspose => inv.transpose(),
                        };
                        for i in 0..4 {
                            let mut acc = 0.0;
                            for j in 0..4 {
                                acc += mat[(i, j)] * row[off + j];
                            }
                            out_row[off + i] = acc;
                        }
                        off += 4;
                    }
                    Block::Rot { cos, sin } => {
                        // Transpose and inverse coincide for rotations.
                        let s = match mode {
                            ApplyMode::Plain | ApplyMode::InverseTranspose => *sin,
                            ApplyMode::Transpose | ApplyMode::Inverse => -*sin,
                        };
                        let (x0, x1) = (row[off], row[off + 1]);
                        out_row[off] = cos * x0 - s * x1;
                        out_row[off + 1] = s * x0 + cos * x1;
                        off += 2;
                    }
                }
            }
        }
        out
    }

    /// Densify `D_t` under `mode`, row-major `dim x dim`. Oracle/test path.
    pub fn dense_matrix(&self, t: usize, mode: ApplyMode) -> Vec<f64> {
        let d = self.data.dim;
        let mut m = vec![0.0; d * d];
        let mut off = 0;
        for b in &self.data.blocks[t] {
            match b {
                Block::Mat { m: bm, inv } => {
                    let mat = match mode {
                        ApplyMode::Plain => *bm,
                        ApplyMode::Transpose => bm.transpose(),
                        ApplyMode::Inverse => *inv,
                        ApplyMode::InverseTranspose => inv.transpose(),
                    };
                    for i in 0..4 {
                        for j in 0..4 {
                            m[(off + i) * d + off + j] = mat[(i, j)];
                        }
                    }
                    off += 4;
                }
                Block::Rot { cos, sin } => {
                    let s = match mode {
                        ApplyMode::Plain | ApplyMode::InverseTranspose => *sin,
                        ApplyMode::Transpose | ApplyMode::Inverse => -*sin,
                    };
                    m[off * d + off] = *cos;
                    m[off * d + off + 1] = -s;
                    m[(off + 1) * d + off] = s;
                    m[(off + 1) * d + off + 1] = *cos;
                    off += 2;
                }
            }
        }
        m
    }

    /// Mutation hook for the property suite: nudge one entry of token `t`'s
    /// first 4x4 block to confirm the invariance checks catch a broken
    /// projective block.
    pub(crate) fn perturb_first_mat_block(&mut self, t: usize, delta: f64) {
        let data = Rc::make_mut(&mut self.data);
        for b in data.blocks[t].iter_mut() {
            if let Block::Mat { m, inv } = b {
                m[(0, 1)] += delta;
                *inv = m.try_inverse().unwrap_or(*inv);
                return;
            }
        }
    }
}

struct ApplyOp {
    transform: BlockDiagonalTransform,
    x: Tensor,
    mode: ApplyMode,
}

impl BackwardOp for ApplyOp {
    fn parents(&self) -> Vec<Tensor> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[f64], _out: &Tensor) {
        if self.x.requires_grad() {
            // d/dx (D^mode x) pulls grad_out back through the adjoint mode.
            let dx = self.transform.apply_raw(grad_out, self.mode.adjoint());
            crate::tensor::accum_external(&self.x, &dx);
        }
    }
}

fn se3_block(cam: &Camera) -> Block {
    let m = cam.extrinsics.matrix4();
    let inv = cam.extrinsics.inverse().matrix4();
    Block::Mat { m, inv }
}

fn proj_block(cam: &Camera) -> Block {
    let p = lift_projection(cam);
    Block::Mat {
        m: *p.matrix(),
        inv: *p.inverse_matrix(),
    }
}

fn rope_axis_blocks(pos: f64, dim: usize, params: &RopeParams) -> Result<Vec<Block>> {
    Ok(rope_pairs(pos, dim, params)?
        .into_iter()
        .map(|(cos, sin)| Block::Rot { cos, sin })
        .collect())
}

fn check_tokens(layout: &TokenLayout, cams: &[Camera]) -> Result<()> {
    if layout.n_images() > cams.len() {
        return Err(Error::dim("encoding", &[layout.n_images()], &[cams.len()]));
    }
    Ok(())
}

/// CaPE: `D_t = I_{d/4} ⊗ T_{i(t)}` with homogeneous 4x4 SE(3) blocks.
pub fn d_cape(layout: &TokenLayout, cams: &[Camera], d: usize) -> Result<BlockDiagonalTransform> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::Config(format!("cape requires head_dim divisible by 4, got {d}")));
    }
    check_tokens(layout, cams)?;
    let per_cam: Vec<Block> = cams.iter().map(se3_block).collect();
    let blocks = layout
        .entries()
        .iter()
        .map(|e| vec![per_cam[e.image]; d / 4])
        .collect();
    Ok(BlockDiagonalTransform::new(d, blocks))
}

/// GTA: first d/2 channels `I_{d/8} ⊗ T_{i(t)}`, last d/2 channels 2D RoPE.
/// Identical to PRoPE with intrinsics forced to identity.
pub fn d_gta(layout: &TokenLayout, cams: &[Camera], d: usize, rope: &RopeParams) -> Result<BlockDiagonalTransform> {
    build_camera_rope(layout, cams, d, rope, se3_block, "gta")
}

/// PRoPE: first d/2 channels `I_{d/8} ⊗ P_{i(t)}` (lifted projection), last
/// d/2 channels `RoPE_{d/4}(x_t) ⊕ RoPE_{d/4}(y_t)`.
pub fn d_prope(layout: &TokenLayout, cams: &[Camera], d: usize, rope: &RopeParams) -> Result<BlockDiagonalTransform> {
    build_camera_rope(layout, cams, d, rope, proj_block, "prope")
}

fn build_camera_rope(
    layout: &TokenLayout,
    cams: &[Camera],
    d: usize,
    rope: &RopeParams,
    cam_block: impl Fn(&Camera) -> Block,
    name: &str,
) -> Result<BlockDiagonalTransform> {
    if d == 0 || d % 8 != 0 {
        return Err(Error::Config(format!("{name} requires head_dim divisible by 8, got {d}")));
    }
    check_tokens(layout, cams)?;
    let per_cam: Vec<Block> = cams.iter().map(&cam_block).collect();
    let axis_dim = d / 4;
    let mut blocks = Vec::with_capacity(layout.token_count());
    for e in layout.entries() {
        let mut token_blocks = vec![per_cam[e.image]; d / 8];
        token_blocks.extend(rope_axis_blocks(e.x as f64, axis_dim, rope)?);
        token_blocks.extend(rope_axis_blocks(e.y as f64, axis_dim, rope)?);
        blocks.push(token_blocks);
    }
    Ok(BlockDiagonalTransform::new(d, blocks))
}

/// Channel-allocation ablations of PRoPE. `full` is PRoPE itself;
/// `proj_only` spends all channels on `I_{d/4} ⊗ P`; `rope_only` spends all
/// channels on 2D RoPE with d/2 per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Full,
    ProjOnly,
    RopeOnly,
}

pub fn ablation_variant(
    kind: AblationKind,
    layout: &TokenLayout,
    cams: &[Camera],
    d: usize,
    rope: &RopeParams,
) -> Result<BlockDiagonalTransform> {
    match kind {
        AblationKind::Full => d_prope(layout, cams, d, rope),
        AblationKind::ProjOnly => {
            if d == 0 || d % 4 != 0 {
                return Err(Error::Config(format!("proj_only requires head_dim divisible by 4, got {d}")));
            }
            check_tokens(layout, cams)?;
            let per_cam: Vec<Block> = cams.iter().map(proj_block).collect();
            let blocks = layout
                .entries()
                .iter()
                .map(|e| vec![per_cam[e.image]; d / 4])
                .collect();
            Ok(BlockDiagonalTransform::new(d, blocks))
        }
        AblationKind::RopeOnly => {
            if d == 0 || d % 4 != 0 {
                return Err(Error::Config(format!("rope_only requires head_dim divisible by 4, got {d}")));
            }
            check_tokens(layout, cams)?;
            let axis_dim = d / 2;
            let mut blocks = Vec::with_capacity(layout.token_count());
            for e in layout.entries() {
                let mut token_blocks = rope_axis_blocks(e.x as f64, axis_dim, rope)?;
                token_blocks.extend(rope_axis_blocks(e.y as f64, axis_dim, rope)?);
                blocks.push(token_blocks);
            }
            Ok(BlockDiagonalTransform::new(d, blocks))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::test_support::{random_camera, random_se3};
    use crate::camera::reanchor_world;
    use crate::tensor::Rng;

    fn mm_dense_for_tests(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
            }
        }
        c
    }

    fn small_layout(n_images: usize) -> TokenLayout {
        TokenLayout::grid(2, 2, &vec![Role::Reference; n_images])
    }

    fn random_cams(rng: &mut Rng, n: usize) -> Vec<Camera> {
        (0..n).map(|_| random_camera(rng)).collect()
    }

    fn rand_matrix(rng: &mut Rng, t: usize, d: usize) -> Tensor {
        let data = (0..t * d).map(|_| rng.normal(0.0, 1.0)).collect();
        Tensor::constant(&[t, d], data).unwrap()
    }

    #[test]
    fn rope_block_zero_position_is_identity() {
        let m = rope_block(0.0, 6, &RopeParams::default()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((m[i * 6 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rope_block_quarter_turn() {
        let m = rope_block(std::f64::consts::FRAC_PI_2, 2, &RopeParams::default()).unwrap();
        let expect = [0.0, -1.0, 1.0, 0.0];
        for (a, b) in m.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn rope_block_relative_property() {
        let mut rng = Rng::new(31);
        let params = RopeParams::default();
        for _ in 0..20 {
            let a = rng.uniform(-20.0, 20.0);
            let b = rng.uniform(-20.0, 20.0);
            let ra = rope_block(a, 8, &params).unwrap();
            let rb = rope_block(b, 8, &params).unwrap();
            let rel = rope_block(b - a, 8, &params).unwrap();
            // ra^T * rb == rel
            let mut prod = vec![0.0; 64];
            for i in 0..8 {
                for j in 0..8 {
                    let mut acc = 0.0;
                    for k in 0..8 {
                        acc += ra[k * 8 + i] * rb[k * 8 + j];
                    }
                    prod[i * 8 + j] = acc;
                }
            }
            for (p, r) in prod.iter().zip(&rel) {
                assert!((p - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rope_block_orthogonal() {
        let m = rope_block(3.7, 8, &RopeParams::default()).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..8 {
                    acc += m[k * 8 + i] * m[k * 8 + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rope_block_rejects_odd_dim() {
        assert!(rope_block(1.0, 3, &RopeParams::default()).is_err());
    }

    #[test]
    fn cape_single_block_matches_extrinsics() {
        let mut rng = Rng::new(32);
        let cams = random_cams(&mut rng, 1);
        let layout = TokenLayout::grid(1, 1, &[Role::Reference]);
        let d = d_cape(&layout, &cams, 4).unwrap();
        let dense = d.dense_matrix(0, ApplyMode::Plain);
        let expect = cams[0].extrinsics.matrix4();
        for i in 0..4 {
            for j in 0..4 {
                assert!((dense[i * 4 + j] - expect[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cape_identity_cameras_give_identity() {
        let cams = vec![Camera::identity(8, 8); 2];
        let layout = small_layout(2);
        let d = d_cape(&layout, &cams, 8).unwrap();
        for t in 0..layout.token_count() {
            let dense = d.dense_matrix(t, ApplyMode::Plain);
            for i in 0..8 {
                for j in 0..8 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dense[i * 8 + j] - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn cape_matches_dense_kronecker_oracle() {
        let mut rng = Rng::new(33);
        let cams = random_cams(&mut rng, 2);
        let layout = small_layout(2);
        let d = 12;
        let transform = d_cape(&layout, &cams, d).unwrap();
        for (t, e) in layout.entries().iter().enumerate() {
            // Kronecker oracle: I_{d/4} ⊗ T
            let tm = cams[e.image].extrinsics.matrix4();
            let mut kron = vec![0.0; d * d];
            for blk in 0..d / 4 {
                for i in 0..4 {
                    for j in 0..4 {
                        kron[(blk * 4 + i) * d + blk * 4 + j] = tm[(i, j)];
                    }
                }
            }
            let dense = transform.dense_matrix(t, ApplyMode::Plain);
            for (a, b) in dense.iter().zip(&kron) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gta_equals_prope_under_identity_intrinsics() {
        let mut rng = Rng::new(34);
        let mut cams = random_cams(&mut rng, 2);
        for c in cams.iter_mut() {
            c.intrinsics = crate::camera::Intrinsics::identity();
        }
        let layout = small_layout(2);
        let rope = RopeParams::default();
        let g = d_gta(&layout, &cams, 16, &rope).unwrap();
        let p = d_prope(&layout, &cams, 16, &rope).unwrap();
        for t in 0..layout.token_count() {
            let a = g.dense_matrix(t, ApplyMode::Plain);
            let b = p.dense_matrix(t, ApplyMode::Plain);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gta_identity_extrinsics_and_zero_pos_is_identity() {
        let cams = vec![Camera::identity(8, 8)];
        let layout = TokenLayout::grid(1, 1, &[Role::Reference]);
        let d = d_gta(&layout, &cams, 16, &RopeParams::default()).unwrap();
        let dense = d.dense_matrix(0, ApplyMode::Plain);
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dense[i * 16 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn prope_same_image_relative_transform_is_rope_only() {
        let mut rng = Rng::new(35);
        let cams = random_cams(&mut rng, 1);
        let layout = TokenLayout::grid(2, 2, &[Role::Reference]);
        let d = 16;
        let rope = RopeParams::default();
        let transform = d_prope(&layout, &cams, d, &rope).unwrap();
        let (t1, t2) = (0, 3);
        let d1 = transform.dense_matrix(t1, ApplyMode::Plain);
        let d2_inv = transform.dense_matrix(t2, ApplyMode::Inverse);
        let rel = mm_dense_for_tests(&d1, &d2_inv, d);
        // First d/2 block must be the identity (same camera).
        for i in 0..d / 2 {
            for j in 0..d / 2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((rel[i * d + j] - expect).abs() < 1e-12, "proj part not identity");
            }
        }
        // Last d/2 block must be the relative RoPE rotation.
        let e1 = layout.entries()[t1];
        let e2 = layout.entries()[t2];
        let rx = rope_block(e1.x as f64 - e2.x as f64, d / 4, &rope).unwrap();
        let ry = rope_block(e1.y as f64 - e2.y as f64, d / 4, &rope).unwrap();
        for i in 0..d / 4 {
            for j in 0..d / 4 {
                let got = rel[(d / 2 + i) * d + d / 2 + j];
                assert!((got - rx[i * (d / 4) + j]).abs() < 1e-12);
                let got = rel[(3 * d / 4 + i) * d + 3 * d / 4 + j];
                assert!((got - ry[i * (d / 4) + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_oracle_matches_apply_on_all_modes() {
        let mut rng = Rng::new(36);
        let cams = random_cams(&mut rng, 2);
        let layout = small_layout(2);
        let d = 16;
        let schemes: Vec<BlockDiagonalTransform> = vec![
            d_cape(&layout, &cams, d).unwrap(),
            d_gta(&layout, &cams, d, &RopeParams::default()).unwrap(),
            d_prope(&layout, &cams, d, &RopeParams::default()).unwrap(),
            ablation_variant(AblationKind::ProjOnly, &layout, &cams, d, &RopeParams::default()).unwrap(),
            ablation_variant(AblationKind::RopeOnly, &layout, &cams, d, &RopeParams::default()).unwrap(),
        ];
        let modes = [
            ApplyMode::Plain,
            ApplyMode::Transpose,
            ApplyMode::Inverse,
            ApplyMode::InverseTranspose,
        ];
        for transform in &schemes {
            let x = rand_matrix(&mut rng, layout.token_count(), d);
            for &mode in &modes {
                let fast = transform.apply(&x, mode).unwrap();
                for t in 0..layout.token_count() {
                    let dense = transform.dense_matrix(t, mode);
                    let row = &x.data()[t * d..(t + 1) * d];
                    for i in 0..d {
                        let expect: f64 = (0..d).map(|j| dense[i * d + j] * row[j]).sum();
                        let got = fast.data()[t * d + i];
                        assert!((got - expect).abs() < 1e-12, "mode {mode:?} token {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn apply_identity_transform_is_identity() {
        let cams = vec![Camera::identity(8, 8); 2];
        let layout = small_layout(2);
        let transform = d_prope(&layout, &cams, 8, &RopeParams::default()).unwrap();
        // Patch positions are nonzero, so build a truly-identity case from
        // token (0,0) only.
        let layout1 = TokenLayout::grid(1, 1, &[Role::Reference]);
        let transform1 = d_prope(&layout1, &cams[..1], 8, &RopeParams::default()).unwrap();
        let mut rng = Rng::new(37);
        let x = rand_matrix(&mut rng, 1, 8);
        let y = transform1.apply(&x, ApplyMode::Plain).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        drop(transform);
    }

    #[test]
    fn transpose_then_inverse_transpose_round_trips() {
        let mut rng = Rng::new(38);
        let cams = random_cams(&mut rng, 2);
        let layout = small_layout(2);
        let transform = d_prope(&layout, &cams, 16, &RopeParams::default()).unwrap();
        let x = rand_matrix(&mut rng, layout.token_count(), 16);
        let y = transform.apply(&x, ApplyMode::Transpose).unwrap();
        let z = transform.apply(&y, ApplyMode::InverseTranspose).unwrap();
        for (a, b) in x.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        // plain o inverse round trip too
        let y = transform.apply(&x, ApplyMode::Inverse).unwrap();
        let z = transform.apply(&y, ApplyMode::Plain).unwrap();
        for (a, b) in x.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn relative_transform_invariant_under_reanchoring() {
        let mut rng = Rng::new(39);
        let layout = small_layout(2);
        let d = 16;
        let rope = RopeParams::default();
        for _ in 0..25 {
            let cams = random_cams(&mut rng, 2);
            let g = random_se3(&mut rng, 1.0);
            let moved = reanchor_world(&cams, &g);
            type Builder = fn(&TokenLayout, &[Camera], usize, &RopeParams) -> Result<BlockDiagonalTransform>;
            let builders: Vec<(&str, Builder)> = vec![
                ("cape", |l, c, d, r| {
                    let _ = r;
                    d_cape(l, c, d)
                }),
                ("gta", d_gta),
                ("prope", d_prope),
            ];
            for (name, build) in builders {
                let before = build(&layout, &cams, d, &rope).unwrap();
                let after = build(&layout, &moved, d, &rope).unwrap();
                for t1 in 0..layout.token_count() {
                    for t2 in 0..layout.token_count() {
                        let rel_b = mm_dense_for_tests(
                            &before.dense_matrix(t1, ApplyMode::Plain),
                            &before.dense_matrix(t2, ApplyMode::Inverse),
                            d,
                        );
                        let rel_a = mm_dense_for_tests(
                            &after.dense_matrix(t1, ApplyMode::Plain),
                            &after.dense_matrix(t2, ApplyMode::Inverse),
                            d,
                        );
                        let dev = rel_b
                            .iter()
                            .zip(&rel_a)
                            .map(|(x, y)| (x - y).abs())
                            .fold(0.0_f64, f64::max);
                        assert!(dev <= 1e-11, "{name}: relative transform moved by {dev}");
                    }
                }
            }
        }
    }

    #[test]
    fn ablation_full_equals_prope() {
        let mut rng = Rng::new(40);
        let cams = random_cams(&mut rng, 2);
        let layout = small_layout(2);
        let rope = RopeParams::default();
        let a = ablation_variant(AblationKind::Full, &layout, &cams, 16, &rope).unwrap();
        let b = d_prope(&layout, &cams, 16, &rope).unwrap();
        for t in 0..layout.token_count() {
            assert_eq!(a.dense_matrix(t, ApplyMode::Plain), b.dense_matrix(t, ApplyMode::Plain));
        }
    }

    #[test]
    fn ablation_proj_only_with_identity_k_is_cape_structure() {
        let mut rng = Rng::new(41);
        let mut cams = random_cams(&mut rng, 2);
        for c in cams.iter_mut() {
            c.intrinsics = crate::camera::Intrinsics::identity();
        }
        let layout = small_layout(2);
        let a = ablation_variant(AblationKind::ProjOnly, &layout, &cams, 12, &RopeParams::default()).unwrap();
        let b = d_cape(&layout, &cams, 12).unwrap();
        for t in 0..layout.token_count() {
            let da = a.dense_matrix(t, ApplyMode::Plain);
            let db = b.dense_matrix(t, ApplyMode::Plain);
            for (x, y) in da.iter().zip(&db) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ablation_rope_only_same_position_identity() {
        let mut rng = Rng::new(42);
        let cams = random_cams(&mut rng, 2);
        // Two images, both tokens at patch (0,0).
        let layout = TokenLayout::grid(1, 1, &[Role::Reference, Role::Reference]);
        let d = 8;
        let t = ablation_variant(AblationKind::RopeOnly, &layout, &cams, d, &RopeParams::default()).unwrap();
        let rel = mm_dense_for_tests(&t.dense_matrix(0, ApplyMode::Plain), &t.dense_matrix(1, ApplyMode::Inverse), d);
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((rel[i * d + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divisibility_errors() {
        let cams = vec![Camera::identity(8, 8)];
        let layout = TokenLayout::grid(1, 1, &[Role::Reference]);
        assert!(d_cape(&layout, &cams, 6).is_err());
        assert!(d_gta(&layout, &cams, 12, &RopeParams::default()).is_err());
        assert!(d_prope(&layout, &cams, 4, &RopeParams::default()).is_err());
        assert!(ablation_variant(AblationKind::RopeOnly, &layout, &cams, 6, &RopeParams::default()).is_err());
    }

    #[test]
    fn apply_gradient_matches_finite_differences() {
        let mut rng = Rng::new(43);
        let cams = random_cams(&mut rng, 2);
        let layout = small_layout(2);
        let transform = d_prope(&layout, &cams, 16, &RopeParams::default()).unwrap();
        let x = rand_matrix(&mut rng, layout.token_count(), 16);
        for mode in [ApplyMode::Plain, ApplyMode::Transpose, ApplyMode::Inverse] {
            let err = crate::tensor::grad_check(|t| transform.apply(t, mode)?.mul(t)?.sum(), &x, 1e-5).unwrap();
            assert!(err < 1e-6, "mode {mode:?}: err {err}");
        }
    }
}

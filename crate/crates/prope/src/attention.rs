//! Scaled dot-product attention and its camera-conditioned variants.
//!
//! All variants operate on single-head `[T, d]` matrices and reduce to the
//! same pairwise structure: the score between tokens t1 and t2 becomes
//! `Q_{t1}^T · D_{t1} D_{t2}^{-1} · K_{t2}`, so only *relative* transforms
//! between tokens ever reach the logits.
//!
//! - `attend`: plain `softmax(Q K^T / sqrt(d)) V`.
//! - `attend_cape`: transforms Q (by `D^T`) and K (by `D^-1`) only.
//! - `attend_gta`: additionally transforms V by `D^-1` and the output by
//!   `D`, which injects the relative transform into value aggregation.
//!   PRoPE uses this same mechanism with its projective `D`.
//! - `attend_conditioned`: builds the per-token transform for a scheme from
//!   cameras + token layout and dispatches.

use crate::camera::Camera;
use crate::encoding::{
    ablation_variant, d_cape, d_gta, d_prope, AblationKind, ApplyMode, BlockDiagonalTransform, RopeParams, TokenLayout,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Attention-level conditioning scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnScheme {
    None,
    Cape,
    Gta,
    Prope,
    PropeProjOnly,
    PropeRopeOnly,
}

impl AttnScheme {
    /// Per-head dimension must be a multiple of this.
    pub fn dim_multiple(self) -> usize {
        match self {
            AttnScheme::None => 1,
            AttnScheme::Cape | AttnScheme::PropeProjOnly | AttnScheme::PropeRopeOnly => 4,
            AttnScheme::Gta | AttnScheme::Prope => 8,
        }
    }

    /// Whether this scheme transforms V and the output (GTA mechanism)
    /// rather than only Q/K (CaPE mechanism).
    pub fn transforms_values(self) -> bool {
        !matches!(self, AttnScheme::None | AttnScheme::Cape)
    }

    /// Build the per-token transform for this scheme, or None for `None`.
    pub fn build_transform(
        self,
        layout: &TokenLayout,
        cams: &[Camera],
        d: usize,
        rope: &RopeParams,
    ) -> Result<Option<BlockDiagonalTransform>> {
        Ok(match self {
            AttnScheme::None => None,
            AttnScheme::Cape => Some(d_cape(layout, cams, d)?),
            AttnScheme::Gta => Some(d_gta(layout, cams, d, rope)?),
            AttnScheme::Prope => Some(d_prope(layout, cams, d, rope)?),
            AttnScheme::PropeProjOnly => Some(ablation_variant(AblationKind::ProjOnly, layout, cams, d, rope)?),
            AttnScheme::PropeRopeOnly => Some(ablation_variant(AblationKind::RopeOnly, layout, cams, d, rope)?),
        })
    }
}

/// Configuration for a conditioned attention call.
#[derive(Clone, Debug)]
pub struct AttentionConfig {
    pub scheme: AttnScheme,
    pub head_dim: usize,
    pub rope: RopeParams,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.scheme.dim_multiple();
        if self.head_dim == 0 || self.head_dim % m != 0 {
            return Err(Error::Config(format!(
                "scheme {:?} requires head_dim divisible by {m}, got {}",
                self.scheme, self.head_dim
            )));
        }
        Ok(())
    }
}

/// Full bidirectional scaled dot-product attention on `[T, d]` matrices.
pub fn attend(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::dim("attend", q.shape(), k.shape()));
    }
    let d = q.shape()[1];
    let scores = q.matmul_nt(k)?.scale(1.0 / (d as f64).sqrt())?;
    let weights = scores.softmax(1)?;
    weights.matmul(v)
}

/// CaPE-style attention: Q and K are transformed, V is not.
pub fn attend_cape(q: &Tensor, k: &Tensor, v: &Tensor, transform: &BlockDiagonalTransform) -> Result<Tensor> {
    let q2 = transform.apply(q, ApplyMode::Transpose)?;
    let k2 = transform.apply(k, ApplyMode::Inverse)?;
    attend(&q2, &k2, v)
}

/// GTA-style attention: Q, K, V and the output are all transformed. Token
/// t1's output is `sum_{t2} alpha_{t1,t2} · D_{t1} D_{t2}^{-1} · V_{t2}`.
pub fn attend_gta(q: &Tensor, k: &Tensor, v: &Tensor, transform: &BlockDiagonalTransform) -> Result<Tensor> {
    let q2 = transform.apply(q, ApplyMode::Transpose)?;
    let k2 = transform.apply(k, ApplyMode::Inverse)?;
    let v2 = transform.apply(v, ApplyMode::Inverse)?;
    let out = attend(&q2, &k2, &v2)?;
    transform.apply(&out, ApplyMode::Plain)
}

/// Build the scheme's transform from cameras and dispatch to the right
/// attention variant.
pub fn attend_conditioned(
    config: &AttentionConfig,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    layout: &TokenLayout,
    cams: &[Camera],
) -> Result<Tensor> {
    config.validate()?;
    if q.shape() != [layout.token_count(), config.head_dim] {
        return Err(Error::dim("attend_conditioned", q.shape(), &[layout.token_count(), config.head_dim]));
    }
    match config.scheme.build_transform(layout, cams, config.head_dim, &config.rope)? {
        None => attend(q, k, v),
        Some(t) if config.scheme.transforms_values() => attend_gta(q, k, v, &t),
        Some(t) => attend_cape(q, k, v, &t),
    }
}

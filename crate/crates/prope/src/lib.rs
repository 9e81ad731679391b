//! Camera conditioning for multiview transformers.
//!
//! This crate implements and compares the main ways of telling a transformer
//! where its input images were taken from:
//!
//! - **Token-level raymaps** ([`raymap`]): per-pixel ray encodings (naive
//!   origin+direction, Plücker, and camera-frame CamRay) concatenated to
//!   image channels.
//! - **Attention-level relative encodings** ([`encoding`], [`attention`]):
//!   per-token block-diagonal transforms applied inside self-attention —
//!   CaPE (relative SE(3) on Q/K), GTA (relative SE(3) + RoPE on Q/K/V/out),
//!   and PRoPE, which replaces the SE(3) block with the relative projective
//!   transform between full camera frustums so intrinsics are encoded too.
//!
//! Everything needed to *measure* the difference ships alongside: a small
//! f64 tensor library with reverse-mode autodiff ([`tensor`]), pinhole
//! camera algebra ([`camera`]), a deterministic sphere-scene renderer and
//! dataset generator ([`synth`]), an LVSM-style multiview transformer with
//! pluggable conditioning ([`model`]), PSNR/accuracy metrics ([`metrics`]),
//! and a CLI harness ([`harness`]) for dataset generation, training,
//! evaluation, ablations, and an executable property suite.
//!
//! Start with the runnable examples (`cargo run --release -p prope
//! --example …`) or the `prope` binary (`prope check`, `prope train`, …).

pub mod attention;
pub mod camera;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod raymap;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

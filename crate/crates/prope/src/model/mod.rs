//! Desk-scale multiview transformer with pluggable camera conditioning.
//!
//! LVSM-flavored decoder-only architecture: images are patchified into
//! tokens, target views contribute query tokens, and every token attends to
//! every other through pre-norm transformer blocks. Camera geometry enters
//! either at the token level (raymaps concatenated to pixel channels) or at
//! the attention level (CaPE/GTA/PRoPE block-diagonal transforms), or both.
//!
//! Attention-only schemes pad the raymap channel slots with a learned fixed
//! embedding so every scheme has identical input, output, and parameter
//! sizes; target tokens then carry a learned target embedding and the
//! target camera reaches the model only through the attention transforms.
//!
//! Episode cameras are gauge-normalized before any encoding sees them: the
//! world origin moves to the camera-center centroid and scene scale is set
//! by the largest pairwise camera distance. Both quantities are equivariant
//! under rigid remappings of the world, so relative encodings stay exactly
//! frame invariant while camera translations stay O(1).

mod checkpoint;

pub use checkpoint::{load_checkpoint, model_from_checkpoint, save_checkpoint, Checkpoint};

use serde::{Deserialize, Serialize};

use crate::attention::{attend, AttnScheme};
use crate::camera::{Camera, PixelConvention};
use crate::encoding::{ApplyMode, BlockDiagonalTransform, Role, RopeParams, TokenLayout};
use crate::error::{Error, Result};
use crate::raymap::{build_raymap, patch_raymap, RaymapKind, RAYMAP_CHANNEL_BUDGET};
use crate::synth::Image;
use crate::tensor::{Rng, Tensor};

const LN_EPS: f64 = 1e-6;

/// Compound conditioning scheme: attention-level part plus token-level part.
///
/// Canonical names: a raymap kind alone ("pluecker") means token-level only;
/// an attention scheme alone ("prope") uses pad-embedding tokens; hybrids
/// join both with '+' ("prope+camray").
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scheme {
    pub attn: AttnScheme,
    pub token: TokenKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Pad,
    Raymap(RaymapKind),
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Scheme> {
        fn token_kind(s: &str) -> Option<RaymapKind> {
            match s {
                "naive" => Some(RaymapKind::Naive),
                "pluecker" => Some(RaymapKind::Pluecker),
                "camray" => Some(RaymapKind::CamRay),
                _ => None,
            }
        }
        fn attn_scheme(s: &str) -> Option<AttnScheme> {
            match s {
                "none" => Some(AttnScheme::None),
                "cape" => Some(AttnScheme::Cape),
                "gta" => Some(AttnScheme::Gta),
                "prope" => Some(AttnScheme::Prope),
                "prope_proj_only" => Some(AttnScheme::PropeProjOnly),
                "prope_rope_only" => Some(AttnScheme::PropeRopeOnly),
                _ => None,
            }
        }
        if let Some((a, t)) = s.split_once('+') {
            let attn = attn_scheme(a).ok_or_else(|| Error::Config(format!("unknown attention scheme {a:?}")))?;
            let kind = token_kind(t).ok_or_else(|| Error::Config(format!("unknown raymap kind {t:?}")))?;
            return Ok(Scheme {
                attn,
                token: TokenKind::Raymap(kind),
            });
        }
        if let Some(kind) = token_kind(s) {
            return Ok(Scheme {
                attn: AttnScheme::None,
                token: TokenKind::Raymap(kind),
            });
        }
        if let Some(attn) = attn_scheme(s) {
            return Ok(Scheme {
                attn,
                token: TokenKind::Pad,
            });
        }
        Err(Error::Config(format!("unknown scheme {s:?}")))
    }

    pub fn name(&self) -> String {
        let attn = match self.attn {
            AttnScheme::None => "none",
            AttnScheme::Cape => "cape",
            AttnScheme::Gta => "gta",
            AttnScheme::Prope => "prope",
            AttnScheme::PropeProjOnly => "prope_proj_only",
            AttnScheme::PropeRopeOnly => "prope_rope_only",
        };
        match (self.attn, self.token) {
            (AttnScheme::None, TokenKind::Raymap(k)) => raymap_name(k).to_string(),
            (_, TokenKind::Pad) => attn.to_string(),
            (_, TokenKind::Raymap(k)) => format!("{attn}+{}", raymap_name(k)),
        }
    }
}

fn raymap_name(k: RaymapKind) -> &'static str {
    match k {
        RaymapKind::Naive => "naive",
        RaymapKind::Pluecker => "pluecker",
        RaymapKind::CamRay => "camray",
    }
}

impl Serialize for Scheme {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Scheme, D::Error> {
        let s = String::deserialize(deserializer)?;
        Scheme::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenInput {
    RaymapConcat,
    PadEmbedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskHead {
    Nvs,
    Cognition,
}

/// Whether raymaps are concatenated per pixel before patchify (default) or
/// one vector per patch after patchify.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaymapLevel {
    Pixel,
    Patch,
}

/// Whether attention transforms apply to per-head slices (default) or to
/// the full model width before the head split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DApplication {
    PerHead,
    FullWidth,
}

fn default_image_size() -> usize {
    32
}
fn default_patch_size() -> usize {
    4
}
fn default_d_model() -> usize {
    64
}
fn default_n_layers() -> usize {
    4
}
fn default_n_heads() -> usize {
    2
}
fn default_head_dim() -> usize {
    32
}
fn default_task_head() -> TaskHead {
    TaskHead::Nvs
}
fn default_raymap_at() -> RaymapLevel {
    RaymapLevel::Pixel
}
fn default_d_application() -> DApplication {
    DApplication::PerHead
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    pub scheme: Scheme,
    /// Optional; derived from the scheme when absent, rejected on mismatch.
    #[serde(default)]
    pub token_input: Option<TokenInput>,
    #[serde(default = "default_task_head")]
    pub head: TaskHead,
    #[serde(default = "default_raymap_at")]
    pub raymap_at: RaymapLevel,
    #[serde(default = "default_d_application")]
    pub d_application: DApplication,
    #[serde(default)]
    pub rope: RopeParams,
    #[serde(default)]
    pub pixel_convention: PixelConvention,
}

impl ModelConfig {
    pub fn with_scheme(scheme: &str) -> Result<ModelConfig> {
        Ok(ModelConfig {
            image_size: default_image_size(),
            patch_size: default_patch_size(),
            d_model: default_d_model(),
            n_layers: default_n_layers(),
            n_heads: default_n_heads(),
            head_dim: default_head_dim(),
            scheme: Scheme::parse(scheme)?,
            token_input: None,
            head: TaskHead::Nvs,
            raymap_at: default_raymap_at(),
            d_application: default_d_application(),
            rope: RopeParams::default(),
            pixel_convention: PixelConvention::Centers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("n_layers, n_heads, head_dim must be positive".into()));
        }
        if self.d_model != self.n_heads * self.head_dim {
            return Err(Error::Config(format!(
                "d_model {} must equal n_heads {} x head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            )));
        }
        let d_eff = self.effective_transform_dim();
        let m = self.scheme.attn.dim_multiple();
        if d_eff % m != 0 {
            return Err(Error::Config(format!(
                "scheme {} requires the transformed dimension ({d_eff}) to be divisible by {m}",
                self.scheme.name()
            )));
        }
        match (self.token_input, self.scheme.token) {
            (None, _) => {}
            (Some(TokenInput::PadEmbedding), TokenKind::Pad) => {}
            (Some(TokenInput::RaymapConcat), TokenKind::Raymap(_)) => {}
            (Some(ti), _) => {
                return Err(Error::Config(format!(
                    "token_input {ti:?} inconsistent with scheme {}; hybrids are spelled \"<attn>+<raymap>\"",
                    self.scheme.name()
                )))
            }
        }
        Ok(())
    }

    pub fn effective_transform_dim(&self) -> usize {
        match self.d_application {
            DApplication::PerHead => self.head_dim,
            DApplication::FullWidth => self.d_model,
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid() * self.grid()
    }

    fn pixel_block_len(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    fn enc_block_len(&self) -> usize {
        match self.raymap_at {
            RaymapLevel::Pixel => self.patch_size * self.patch_size * RAYMAP_CHANNEL_BUDGET,
            RaymapLevel::Patch => RAYMAP_CHANNEL_BUDGET,
        }
    }

    pub fn patch_in_dim(&self) -> usize {
        self.pixel_block_len() + self.enc_block_len()
    }
}

/// One multiview episode: posed reference images plus either target cameras
/// (view synthesis) or a corrupted-pair label (spatial cognition).
#[derive(Clone, Debug)]
pub struct Episode {
    pub references: Vec<(Image, Camera)>,
    pub targets: Vec<Camera>,
    pub label: Option<usize>,
}

impl Episode {
    pub fn nvs(references: Vec<(Image, Camera)>, targets: Vec<Camera>) -> Episode {
        Episode {
            references,
            targets,
            label: None,
        }
    }

    pub fn n_images(&self) -> usize {
        self.references.len() + self.targets.len()
    }

    fn cameras(&self) -> Vec<Camera> {
        self.references
            .iter()
            .map(|(_, c)| *c)
            .chain(self.targets.iter().copied())
            .collect()
    }
}

/// Swap one view's extrinsics for another view's, recording the victim as
/// the classification label. Intrinsics stay untouched.
pub fn corrupt_episode(views: &[(Image, Camera)], rng: &mut Rng) -> Result<Episode> {
    if views.len() < 2 {
        return Err(Error::Config(format!("corrupt_episode needs >= 2 views, got {}", views.len())));
    }
    let victim = rng.index(views.len());
    let donor_raw = rng.index(views.len() - 1);
    let donor = if donor_raw >= victim { donor_raw + 1 } else { donor_raw };
    let mut references = views.to_vec();
    references[victim].1.extrinsics = views[donor].1.extrinsics;
    Ok(Episode {
        references,
        targets: Vec::new(),
        label: Some(victim),
    })
}

/// Gauge-normalize episode cameras: recenter the world on the camera-center
/// centroid and rescale so the largest pairwise camera distance is 1. Both
/// statistics are rigid-equivariant, so a world re-anchoring changes the
/// normalized cameras by a pure rotation only.
pub fn normalize_cameras(cams: &[Camera]) -> Vec<Camera> {
    if cams.is_empty() {
        return Vec::new();
    }
    let origins: Vec<_> = cams.iter().map(|c| c.origin()).collect();
    let centroid = origins.iter().sum::<crate::camera::Vec3>() / origins.len() as f64;
    let mut max_dist: f64 = 0.0;
    for i in 0..origins.len() {
        for j in i + 1..origins.len() {
            max_dist = max_dist.max((origins[i] - origins[j]).norm());
        }
    }
    let scale = if max_dist > 1e-9 { 1.0 / max_dist } else { 1.0 };
    cams.iter()
        .map(|c| {
            let r = *c.extrinsics.rotation();
            let t = (r * centroid + c.extrinsics.translation()) * scale;
            Camera {
                intrinsics: c.intrinsics,
                extrinsics: crate::camera::SE3::new(r, t).expect("rotation unchanged"),
                width: c.width,
                height: c.height,
            }
        })
        .collect()
}

// ── layers ──────────────────────────────────────────────────────────

struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    fn init(rng: &mut Rng, in_dim: usize, out_dim: usize) -> Result<Linear> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.normal(0.0, std)).collect();
        Ok(Linear {
            w: Tensor::param(&[in_dim, out_dim], w)?,
            b: Tensor::param(&[out_dim], vec![0.0; out_dim])?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_row(&self.b)
    }
}

struct Affine {
    gain: Tensor,
    bias: Tensor,
}

impl Affine {
    fn init(d: usize) -> Result<Affine> {
        Ok(Affine {
            gain: Tensor::param(&[d], vec![1.0; d])?,
            bias: Tensor::param(&[d], vec![0.0; d])?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(LN_EPS)?.mul_row(&self.gain)?.add_row(&self.bias)
    }
}

struct Block {
    ln1: Affine,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: Affine,
    ffn1: Linear,
    ffn2: Linear,
}

impl Block {
    fn init(rng: &mut Rng, d: usize) -> Result<Block> {
        Ok(Block {
            ln1: Affine::init(d)?,
            wq: Linear::init(rng, d, d)?,
            wk: Linear::init(rng, d, d)?,
            wv: Linear::init(rng, d, d)?,
            wo: Linear::init(rng, d, d)?,
            ln2: Affine::init(d)?,
            ffn1: Linear::init(rng, d, 4 * d)?,
            ffn2: Linear::init(rng, 4 * d, d)?,
        })
    }
}

struct ForwardCtx {
    transform: Option<BlockDiagonalTransform>,
    scheme: AttnScheme,
    n_heads: usize,
    head_dim: usize,
    d_application: DApplication,
}

/// The trainable model: patch embedding, transformer blocks, task head.
pub struct Model {
    pub config: ModelConfig,
    embed: Linear,
    pad_embed: Tensor,
    target_embed: Tensor,
    blocks: Vec<Block>,
    final_norm: Affine,
    head: Linear,
}

impl Model {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Model> {
        config.validate()?;
        let d = config.d_model;
        let embed = Linear::init(rng, config.patch_in_dim(), d)?;
        let pad_embed = Tensor::param(
            &[RAYMAP_CHANNEL_BUDGET],
            (0..RAYMAP_CHANNEL_BUDGET).map(|_| rng.normal(0.0, 0.5)).collect(),
        )?;
        let target_embed = Tensor::param(
            &[RAYMAP_CHANNEL_BUDGET],
            (0..RAYMAP_CHANNEL_BUDGET).map(|_| rng.normal(0.0, 0.5)).collect(),
        )?;
        let blocks = (0..config.n_layers)
            .map(|_| Block::init(rng, d))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = Affine::init(d)?;
        let head_out = match config.head {
            TaskHead::Nvs => config.patch_size * config.patch_size * 3,
            TaskHead::Cognition => 1,
        };
        let head = Linear::init(rng, d, head_out)?;
        Ok(Model {
            config: config.clone(),
            embed,
            pad_embed,
            target_embed,
            blocks,
            final_norm,
            head,
        })
    }

    /// Named parameters in a stable order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.w".into(), &self.embed.w),
            ("embed.b".into(), &self.embed.b),
            ("pad_embed".into(), &self.pad_embed),
            ("target_embed".into(), &self.target_embed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, t) in [
                ("ln1.gain", &b.ln1.gain),
                ("ln1.bias", &b.ln1.bias),
                ("wq.w", &b.wq.w),
                ("wq.b", &b.wq.b),
                ("wk.w", &b.wk.w),
                ("wk.b", &b.wk.b),
                ("wv.w", &b.wv.w),
                ("wv.b", &b.wv.b),
                ("wo.w", &b.wo.w),
                ("wo.b", &b.wo.b),
                ("ln2.gain", &b.ln2.gain),
                ("ln2.bias", &b.ln2.bias),
                ("ffn1.w", &b.ffn1.w),
                ("ffn1.b", &b.ffn1.b),
                ("ffn2.w", &b.ffn2.w),
                ("ffn2.b", &b.ffn2.b),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("final_norm.gain".into(), &self.final_norm.gain));
        out.push(("final_norm.bias".into(), &self.final_norm.bias));
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed.w".into(), &mut self.embed.w),
            ("embed.b".into(), &mut self.embed.b),
            ("pad_embed".into(), &mut self.pad_embed),
            ("target_embed".into(), &mut self.target_embed),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (n, t) in [
                ("ln1.gain", &mut b.ln1.gain),
                ("ln1.bias", &mut b.ln1.bias),
                ("wq.w", &mut b.wq.w),
                ("wq.b", &mut b.wq.b),
                ("wk.w", &mut b.wk.w),
                ("wk.b", &mut b.wk.b),
                ("wv.w", &mut b.wv.w),
                ("wv.b", &mut b.wv.b),
                ("wo.w", &mut b.wo.w),
                ("wo.b", &mut b.wo.b),
                ("ln2.gain", &mut b.ln2.gain),
                ("ln2.bias", &mut b.ln2.bias),
                ("ffn1.w", &mut b.ffn1.w),
                ("ffn1.b", &mut b.ffn1.b),
                ("ffn2.w", &mut b.ffn2.w),
                ("ffn2.b", &mut b.ffn2.b),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("final_norm.gain".into(), &mut self.final_norm.gain));
        out.push(("final_norm.bias".into(), &mut self.final_norm.bias));
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.params() {
            t.zero_grad();
        }
    }

    fn episode_checks(&self, episode: &Episode) -> Result<()> {
        if episode.references.is_empty() {
            return Err(Error::Config("episode needs at least one reference view".into()));
        }
        for (img, cam) in &episode.references {
            if img.width != self.config.image_size
                || img.height != self.config.image_size
                || cam.width != self.config.image_size
                || cam.height != self.config.image_size
            {
                return Err(Error::dim(
                    "tokenize",
                    &[img.height, img.width],
                    &[self.config.image_size, self.config.image_size],
                ));
            }
        }
        Ok(())
    }

    /// Patchified pixel block: `[tokens, patch^2 * 3]`, zero for targets.
    fn pixel_features(&self, episode: &Episode) -> Result<Tensor> {
        let cfg = &self.config;
        let (g, p) = (cfg.grid(), cfg.patch_size);
        let tpi = cfg.tokens_per_image();
        let n_images = episode.n_images();
        let mut data = Vec::with_capacity(n_images * tpi * cfg.pixel_block_len());
        for (img, _) in &episode.references {
            for py in 0..g {
                for px in 0..g {
                    for dy in 0..p {
                        for dx in 0..p {
                            data.extend_from_slice(img.at(px * p + dx, py * p + dy));
                        }
                    }
                }
            }
        }
        data.extend(std::iter::repeat(0.0).take(episode.targets.len() * tpi * cfg.pixel_block_len()));
        Tensor::constant(&[n_images * tpi, cfg.pixel_block_len()], data)
    }

    /// Raymap channel block for raymap token schemes: constant tensor. The
    /// channel budget is fixed at 6; CamRay's 3 channels are zero-padded so
    /// every scheme shares the embedding shape.
    fn raymap_features(&self, kind: RaymapKind, cams: &[Camera]) -> Result<Tensor> {
        let cfg = &self.config;
        let (g, p) = (cfg.grid(), cfg.patch_size);
        let tpi = cfg.tokens_per_image();
        let rc = RAYMAP_CHANNEL_BUDGET;
        let mut data = Vec::with_capacity(cams.len() * tpi * cfg.enc_block_len());
        for cam in cams {
            match cfg.raymap_at {
                RaymapLevel::Pixel => {
                    let map = build_raymap(kind, cam, cfg.pixel_convention)?;
                    for py in 0..g {
                        for px in 0..g {
                            for dy in 0..p {
                                for dx in 0..p {
                                    let v = map.at(px * p + dx, py * p + dy);
                                    data.extend_from_slice(v);
                                    data.extend(std::iter::repeat(0.0).take(rc - v.len()));
                                }
                            }
                        }
                    }
                }
                RaymapLevel::Patch => {
                    let map = patch_raymap(kind, cam, p, cfg.pixel_convention)?;
                    for py in 0..g {
                        for px in 0..g {
                            let v = map.at(px, py);
                            data.extend_from_slice(v);
                            data.extend(std::iter::repeat(0.0).take(rc - v.len()));
                        }
                    }
                }
            }
        }
        Tensor::constant(&[cams.len() * tpi, cfg.enc_block_len()], data)
    }

    /// Learned channel block for pad-embedding schemes: the pad vector on
    /// reference tokens, the target vector on target tokens.
    fn pad_features(&self, n_ref: usize, n_tgt: usize) -> Result<Tensor> {
        let cfg = &self.config;
        let tpi = cfg.tokens_per_image();
        let tiles = cfg.enc_block_len() / RAYMAP_CHANNEL_BUDGET;
        let tile = |t: &Tensor| -> Result<Tensor> {
            if tiles == 1 {
                Ok(t.clone())
            } else {
                Tensor::concat(&vec![t.clone(); tiles], 0)
            }
        };
        let ref_rows = tile(&self.pad_embed)?.broadcast_rows(n_ref * tpi)?;
        if n_tgt == 0 {
            return Ok(ref_rows);
        }
        let tgt_rows = tile(&self.target_embed)?.broadcast_rows(n_tgt * tpi)?;
        Tensor::concat(&[ref_rows, tgt_rows], 0)
    }

    /// Assemble and embed episode tokens. Returns `[T, d_model]`, the token
    /// layout, and the gauge-normalized episode cameras.
    pub fn tokenize(&self, episode: &Episode) -> Result<(Tensor, TokenLayout, Vec<Camera>)> {
        self.episode_checks(episode)?;
        let cfg = &self.config;
        let cams = normalize_cameras(&episode.cameras());
        let n_ref = episode.references.len();
        let n_tgt = episode.targets.len();
        let roles: Vec<Role> = std::iter::repeat(Role::Reference)
            .take(n_ref)
            .chain(std::iter::repeat(Role::Target).take(n_tgt))
            .collect();
        let layout = TokenLayout::grid(cfg.grid(), cfg.grid(), &roles);

        let pixels = self.pixel_features(episode)?;
        let enc = match cfg.scheme.token {
            TokenKind::Raymap(kind) => self.raymap_features(kind, &cams)?,
            TokenKind::Pad => self.pad_features(n_ref, n_tgt)?,
        };
        let features = Tensor::concat(&[pixels, enc], 1)?;
        let embedded = self.embed.forward(&features)?;
        Ok((embedded, layout, cams))
    }

    fn attention_sublayer(&self, block: &Block, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let q = block.wq.forward(x)?;
        let k = block.wk.forward(x)?;
        let v = block.wv.forward(x)?;
        let heads = ctx.n_heads;
        let hd = ctx.head_dim;

        let merged = match (&ctx.transform, ctx.d_application) {
            (None, _) => per_head_attend(&q, &k, &v, heads, hd)?,
            (Some(t), DApplication::PerHead) => {
                let mut outs = Vec::with_capacity(heads);
                for h in 0..heads {
                    let qh = q.slice(1, h * hd, (h + 1) * hd)?;
                    let kh = k.slice(1, h * hd, (h + 1) * hd)?;
                    let vh = v.slice(1, h * hd, (h + 1) * hd)?;
                    let out = if ctx.scheme.transforms_values() {
                        crate::attention::attend_gta(&qh, &kh, &vh, t)?
                    } else {
                        crate::attention::attend_cape(&qh, &kh, &vh, t)?
                    };
                    outs.push(out);
                }
                Tensor::concat(&outs, 1)?
            }
            (Some(t), DApplication::FullWidth) => {
                let q2 = t.apply(&q, ApplyMode::Transpose)?;
                let k2 = t.apply(&k, ApplyMode::Inverse)?;
                if ctx.scheme.transforms_values() {
                    let v2 = t.apply(&v, ApplyMode::Inverse)?;
                    let out = per_head_attend(&q2, &k2, &v2, heads, hd)?;
                    t.apply(&out, ApplyMode::Plain)?
                } else {
                    per_head_attend(&q2, &k2, &v, heads, hd)?
                }
            }
        };
        block.wo.forward(&merged)
    }

    /// Run the transformer stack; returns final token states and layout.
    pub fn forward_tokens(&self, episode: &Episode) -> Result<(Tensor, TokenLayout)> {
        let cfg = &self.config;
        let (mut x, layout, cams) = self.tokenize(episode)?;
        let transform = cfg
            .scheme
            .attn
            .build_transform(&layout, &cams, cfg.effective_transform_dim(), &cfg.rope)?;
        let ctx = ForwardCtx {
            transform,
            scheme: cfg.scheme.attn,
            n_heads: cfg.n_heads,
            head_dim: cfg.head_dim,
            d_application: cfg.d_application,
        };
        for block in &self.blocks {
            let a = self.attention_sublayer(block, &block.ln1.forward(&x)?, &ctx)?;
            x = x.add(&a)?;
            let h = block.ln2.forward(&x)?;
            let f = block.ffn2.forward(&block.ffn1.forward(&h)?.gelu()?)?;
            x = x.add(&f)?;
        }
        Ok((self.final_norm.forward(&x)?, layout))
    }

    /// Predicted target patches: `[n_targets * tokens_per_image, patch^2*3]`
    /// squashed to [0, 1].
    fn nvs_pred_tensor(&self, episode: &Episode) -> Result<Tensor> {
        if self.config.head != TaskHead::Nvs {
            return Err(Error::Config("forward_nvs requires head = nvs".into()));
        }
        if episode.targets.is_empty() {
            return Err(Error::Config("nvs episode needs at least one target view".into()));
        }
        let (x, layout) = self.forward_tokens(episode)?;
        let tpi = layout.tokens_per_image();
        let t_ref = episode.references.len() * tpi;
        let tgt = x.slice(0, t_ref, layout.token_count())?;
        self.head.forward(&tgt)?.sigmoid()
    }

    /// Predict target images.
    pub fn forward_nvs(&self, episode: &Episode) -> Result<Vec<Image>> {
        let pred = self.nvs_pred_tensor(episode)?;
        let cfg = &self.config;
        let (g, p, s) = (cfg.grid(), cfg.patch_size, cfg.image_size);
        let tpi = cfg.tokens_per_image();
        let mut images = Vec::with_capacity(episode.targets.len());
        for i in 0..episode.targets.len() {
            let mut img = Image::constant(s, s, [0.0; 3]);
            for py in 0..g {
                for px in 0..g {
                    let row_start = ((i * tpi) + py * g + px) * cfg.pixel_block_len();
                    let row = &pred.data()[row_start..row_start + cfg.pixel_block_len()];
                    for dy in 0..p {
                        for dx in 0..p {
                            let src = (dy * p + dx) * 3;
                            let dst = ((py * p + dy) * s + (px * p + dx)) * 3;
                            img.data[dst..dst + 3].copy_from_slice(&row[src..src + 3]);
                        }
                    }
                }
            }
            images.push(img);
        }
        Ok(images)
    }

    /// Patchify ground-truth target images to match the prediction layout.
    fn patchify_truth(&self, truths: &[Image]) -> Result<Tensor> {
        let cfg = &self.config;
        let (g, p) = (cfg.grid(), cfg.patch_size);
        let tpi = cfg.tokens_per_image();
        let mut data = Vec::with_capacity(truths.len() * tpi * cfg.pixel_block_len());
        for img in truths {
            for py in 0..g {
                for px in 0..g {
                    for dy in 0..p {
                        for dx in 0..p {
                            data.extend_from_slice(img.at(px * p + dx, py * p + dy));
                        }
                    }
                }
            }
        }
        Tensor::constant(&[truths.len() * tpi, cfg.pixel_block_len()], data)
    }

    /// Mean squared error over all target pixels, differentiable.
    pub fn loss_nvs(&self, episode: &Episode, truths: &[Image]) -> Result<Tensor> {
        if truths.len() != episode.targets.len() {
            return Err(Error::dim("loss_nvs", &[truths.len()], &[episode.targets.len()]));
        }
        let pred = self.nvs_pred_tensor(episode)?;
        let truth = self.patchify_truth(truths)?;
        mse_loss(&pred, &truth)
    }

    /// Probability that each image-camera pair is the corrupted one:
    /// per-token scalars, mean-pooled per image, softmax over images.
    pub fn forward_cognition(&self, episode: &Episode) -> Result<Tensor> {
        self.cognition_logits(episode)?.softmax(0)
    }

    fn cognition_logits(&self, episode: &Episode) -> Result<Tensor> {
        if self.config.head != TaskHead::Cognition {
            return Err(Error::Config("forward_cognition requires head = cognition".into()));
        }
        let n = episode.references.len();
        if n < 2 {
            return Err(Error::Config(format!("cognition episode needs >= 2 views, got {n}")));
        }
        if !episode.targets.is_empty() {
            return Err(Error::Config("cognition episode must not carry target views".into()));
        }
        let (x, layout) = self.forward_tokens(episode)?;
        let scores = self.head.forward(&x)?; // [T, 1]
        let tpi = layout.tokens_per_image();
        // Constant mean-pooling matrix [n, T].
        let mut pool = vec![0.0; n * layout.token_count()];
        for (t, e) in layout.entries().iter().enumerate() {
            pool[e.image * layout.token_count() + t] = 1.0 / tpi as f64;
        }
        let pool = Tensor::constant(&[n, layout.token_count()], pool)?;
        pool.matmul(&scores)?.reshape(&[n])
    }

    /// Cross-entropy against the corrupted index.
    pub fn loss_cognition(&self, episode: &Episode) -> Result<Tensor> {
        let label = episode
            .label
            .ok_or_else(|| Error::Config("cognition episode carries no label".into()))?;
        let logits = self.cognition_logits(episode)?;
        if label >= logits.numel() {
            return Err(Error::Config(format!("label {label} out of range")));
        }
        logits.log_softmax(0)?.slice(0, label, label + 1)?.scale(-1.0)
    }
}

fn per_head_attend(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, hd: usize) -> Result<Tensor> {
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice(1, h * hd, (h + 1) * hd)?;
        let kh = k.slice(1, h * hd, (h + 1) * hd)?;
        let vh = v.slice(1, h * hd, (h + 1) * hd)?;
        outs.push(attend(&qh, &kh, &vh)?);
    }
    Tensor::concat(&outs, 1)
}

/// Plain MSE between two same-shape tensors.
pub fn mse_loss(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    let d = pred.sub(truth)?;
    d.mul(&d)?.mean()
}

/// Central-difference check of d(loss)/d(params) for every parameter
/// component. Returns the worst componentwise error (relative above 1e-8
/// magnitude, absolute below).
pub fn grad_check_params<F>(model: &mut Model, loss_fn: F, eps: f64) -> Result<f64>
where
    F: Fn(&Model) -> Result<Tensor>,
{
    model.zero_grads();
    let loss = loss_fn(model)?;
    loss.backward()?;
    let grads: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for pi in 0..grads.len() {
        for ci in 0..grads[pi].len() {
            let orig = model.params()[pi].1.data()[ci];
            let set = |m: &mut Model, value: f64| -> Result<()> {
                let mut ps = m.params_mut();
                let t = &mut ps[pi].1;
                let mut data = t.data().to_vec();
                data[ci] = value;
                **t = Tensor::param(&shapes[pi], data)?;
                Ok(())
            };
            set(model, orig + eps)?;
            let fp = loss_fn(model)?.item();
            set(model, orig - eps)?;
            let fm = loss_fn(model)?.item();
            set(model, orig)?;
            let fd = (fp - fm) / (2.0 * eps);
            let diff = (grads[pi][ci] - fd).abs();
            let denom = grads[pi][ci].abs().max(fd.abs());
            let err = if denom < 1e-8 { diff } else { diff / denom };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;

//! Procedural multiview data: sphere scenes rendered through pinhole
//! cameras, with deterministic generation and a bit-exact on-disk format.
//!
//! Scenes are a handful of Lambert-shaded spheres with distinct hues so
//! that occlusion and shading change with viewpoint; cameras sit on an
//! orbit shell looking at the origin. Everything derives from seeds, and
//! regenerating a dataset from the same spec is byte-identical.
//!
//! On-disk format:
//! - `manifest.json`: spec echo plus per-scene seeds and per-view camera
//!   parameters (9 row-major rotation entries, 3 translation entries,
//!   fx, fy, cx, cy, width, height) and relative payload paths.
//! - payload files: 16-byte header (magic `MVIW`, format version u32,
//!   height u32, width u32, all little-endian) followed by H*W*3 f32
//!   little-endian RGB values, row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{
    camera_origin, lift_projection, ray_direction, Camera, Intrinsics, Mat3, PixelConvention, SE3, Vec3,
};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const PAYLOAD_MAGIC: &[u8; 4] = b"MVIW";
pub const FORMAT_VERSION: u32 = 1;

/// Dense H x W x 3 image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major `[y][x][rgb]`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Image {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * 3;
        &self.data[i..i + 3]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub albedo: [f64; 3],
}

/// A renderable scene, fully determined by its seed and generation bounds.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spheres: Vec<Sphere>,
    pub background: [f64; 3],
    /// Unit vector toward the light, in world coordinates.
    pub light_dir: Vec3,
    pub seed: u64,
}

/// Scene generation bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub min_spheres: usize,
    pub max_spheres: usize,
    pub placement_radius: f64,
    pub min_sphere_radius: f64,
    pub max_sphere_radius: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            min_spheres: 3,
            max_spheres: 8,
            placement_radius: 0.6,
            min_sphere_radius: 0.15,
            max_sphere_radius: 0.35,
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl Scene {
    /// Deterministically generate a scene from its seed.
    pub fn generate(seed: u64, params: &SceneParams) -> Scene {
        let mut rng = Rng::new(seed);
        let n = params.min_spheres + rng.index(params.max_spheres - params.min_spheres + 1);
        let hue_base = rng.unit();
        let mut spheres = Vec::with_capacity(n);
        for i in 0..n {
            let dir = rng.unit_sphere();
            let r = params.placement_radius * rng.unit().cbrt();
            let center = Vec3::new(dir[0], dir[1], dir[2]) * r;
            let radius = rng.uniform(params.min_sphere_radius, params.max_sphere_radius);
            // Golden-ratio hue spacing keeps colors distinct.
            let hue = ((hue_base + i as f64 * 0.381966) % 1.0) * 360.0;
            let albedo = hsv_to_rgb(hue, 0.75, 0.9);
            spheres.push(Sphere { center, radius, albedo });
        }
        let background_v = rng.uniform(0.02, 0.12);
        let background = [background_v, background_v, background_v * 1.2];
        let l = rng.unit_sphere();
        Scene {
            spheres,
            background,
            light_dir: Vec3::new(l[0], l[1], l[2]),
            seed,
        }
    }

    /// Content hash for collision checks (FNV-1a over sphere parameters).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: f64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for s in &self.spheres {
            mix(s.center.x);
            mix(s.center.y);
            mix(s.center.z);
            mix(s.radius);
        }
        h
    }
}

/// Render a scene: nearest positive ray-sphere intersection per pixel,
/// Lambert shading with a small ambient floor, background elsewhere.
pub fn render(scene: &Scene, cam: &Camera, conv: PixelConvention) -> Result<Image> {
    let p = lift_projection(cam);
    let origin = camera_origin(&cam.extrinsics);
    let mut data = Vec::with_capacity(cam.width * cam.height * 3);
    for y in 0..cam.height {
        let v = conv.coord(y, cam.height);
        for x in 0..cam.width {
            let u = conv.coord(x, cam.width);
            let d = ray_direction(&p, u, v)?;
            let mut best: Option<(f64, &Sphere)> = None;
            for s in &scene.spheres {
                let oc = origin - s.center;
                let b = d.dot(&oc);
                let c0 = oc.norm_squared() - s.radius * s.radius;
                let disc = b * b - c0;
                if disc < 0.0 {
                    continue;
                }
                let sqrt_disc = disc.sqrt();
                // Smallest positive root.
                let t = if -b - sqrt_disc > 1e-9 {
                    -b - sqrt_disc
                } else if -b + sqrt_disc > 1e-9 {
                    -b + sqrt_disc
                } else {
                    continue;
                };
                if best.map(|(bt, _)| t < bt).unwrap_or(true) {
                    best = Some((t, s));
                }
            }
            match best {
                Some((t, s)) => {
                    let hit = origin + d * t;
                    let n = (hit - s.center).normalize();
                    let lambert = n.dot(&scene.light_dir).max(0.0);
                    let shade = 0.15 + 0.85 * lambert;
                    for ch in 0..3 {
                        data.push((s.albedo[ch] * shade).clamp(0.0, 1.0));
                    }
                }
                None => data.extend_from_slice(&scene.background),
            }
        }
    }
    Ok(Image {
        width: cam.width,
        height: cam.height,
        data,
    })
}

/// How per-view intrinsics are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZoomMode {
    /// All views share the base field of view.
    Fixed,
    /// Base focal length multiplied by U[min, max] per view.
    UniformZoom { min: f64, max: f64 },
    /// Field of view sampled uniformly in degrees per view.
    FovRange { min_deg: f64, max_deg: f64 },
}

impl ZoomMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ZoomMode::Fixed => Ok(()),
            ZoomMode::UniformZoom { min, max } => {
                if min <= 0.0 || max < min {
                    return Err(Error::Config(format!("zoom bounds [{min}, {max}] must be positive and ordered")));
                }
                Ok(())
            }
            ZoomMode::FovRange { min_deg, max_deg } => {
                if min_deg <= 0.0 || max_deg < min_deg || max_deg >= 180.0 {
                    return Err(Error::Config(format!("fov range [{min_deg}, {max_deg}] degrees is invalid")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Everything needed to (re)generate a dataset deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_scenes: usize,
    /// Reference views per scene; targets come on top.
    pub views_per_scene: usize,
    pub n_targets: usize,
    pub image_size: usize,
    pub orbit_radius_min: f64,
    pub orbit_radius_max: f64,
    pub base_fov_deg: f64,
    pub zoom: ZoomMode,
    pub split: Split,
    pub seed: u64,
    #[serde(default)]
    pub scene_params: Option<SceneParams>,
}

/// Scene seeds are `dataset_seed * 2^20 + index`, which keeps seed ranges
/// disjoint across datasets as long as dataset seeds differ.
pub const SCENE_SEED_STRIDE: u64 = 1 << 20;

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 || self.views_per_scene == 0 {
            return Err(Error::Config("dataset needs at least one scene and one view".into()));
        }
        if self.n_scenes as u64 >= SCENE_SEED_STRIDE {
            return Err(Error::Config(format!("n_scenes must stay below {SCENE_SEED_STRIDE}")));
        }
        if self.seed >= u64::MAX / SCENE_SEED_STRIDE {
            return Err(Error::Config("dataset seed too large for scene seed derivation".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if !(self.orbit_radius_min > 0.0 && self.orbit_radius_max >= self.orbit_radius_min) {
            return Err(Error::Config(format!(
                "orbit radius range [{}, {}] must be positive and ordered",
                self.orbit_radius_min, self.orbit_radius_max
            )));
        }
        if !(self.base_fov_deg > 0.0 && self.base_fov_deg < 180.0) {
            return Err(Error::Config(format!("base fov {} degrees is invalid", self.base_fov_deg)));
        }
        self.zoom.validate()?;
        let params = self.scene_params.unwrap_or_default();
        if params.min_spheres == 0 || params.max_spheres < params.min_spheres {
            return Err(Error::Config("sphere count bounds invalid".into()));
        }
        Ok(())
    }

    pub fn scene_seed(&self, index: usize) -> u64 {
        self.seed * SCENE_SEED_STRIDE + index as u64
    }

    pub fn base_focal(&self) -> f64 {
        0.5 / (self.base_fov_deg.to_radians() / 2.0).tan()
    }
}

/// Look-at cameras on a spherical orbit shell, intrinsics per zoom mode.
pub fn sample_cameras(rng: &mut Rng, n: usize, spec: &DatasetSpec) -> Result<Vec<Camera>> {
    let up = Vec3::new(0.0, 0.0, 1.0);
    let base_focal = spec.base_focal();
    let mut cams = Vec::with_capacity(n);
    while cams.len() < n {
        let dir = rng.unit_sphere();
        let eye = Vec3::new(dir[0], dir[1], dir[2]) * rng.uniform(spec.orbit_radius_min, spec.orbit_radius_max);
        let forward = (-eye).normalize();
        // Re-sample when the view direction is too close to the up vector.
        if forward.dot(&up).abs() > 0.999 {
            continue;
        }
        let x_axis = forward.cross(&up).normalize();
        let y_axis = forward.cross(&x_axis);
        let rotation = Mat3::from_rows(&[x_axis.transpose(), y_axis.transpose(), forward.transpose()]);
        let extr = SE3::new(rotation, -(rotation * eye))?;
        let focal = match spec.zoom {
            ZoomMode::Fixed => base_focal,
            ZoomMode::UniformZoom { min, max } => base_focal * rng.uniform(min, max),
            ZoomMode::FovRange { min_deg, max_deg } => {
                let fov = rng.uniform(min_deg, max_deg);
                0.5 / (fov.to_radians() / 2.0).tan()
            }
        };
        cams.push(Camera::new(
            Intrinsics::from_focal(focal, focal)?,
            extr,
            spec.image_size,
            spec.image_size,
        )?);
    }
    Ok(cams)
}

// ── on-disk format ──────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub payload: String,
    pub role: String,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl ManifestView {
    pub fn camera(&self) -> Result<Camera> {
        let r = Mat3::from_row_slice(&self.rotation);
        let t = Vec3::new(self.translation[0], self.translation[1], self.translation[2]);
        Camera::new(
            Intrinsics::new(self.fx, self.fy, self.cx, self.cy, 0.0)?,
            SE3::new(r, t)?,
            self.width,
            self.height,
        )
    }

    fn from_camera(cam: &Camera, payload: String, role: &str) -> ManifestView {
        let r = cam.extrinsics.rotation();
        let t = cam.extrinsics.translation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)];
            }
        }
        ManifestView {
            payload,
            role: role.to_string(),
            rotation,
            translation: [t.x, t.y, t.z],
            fx: cam.intrinsics.fx,
            fy: cam.intrinsics.fy,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
            width: cam.width,
            height: cam.height,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestScene {
    pub index: usize,
    pub seed: u64,
    pub views: Vec<ManifestView>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub scenes: Vec<ManifestScene>,
}

pub fn write_payload(path: &Path, image: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + image.data.len() * 4);
    buf.extend_from_slice(PAYLOAD_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(image.height as u32).to_le_bytes());
    buf.extend_from_slice(&(image.width as u32).to_le_bytes());
    for &v in &image.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_payload(path: &Path) -> Result<Image> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[0..4] != PAYLOAD_MAGIC {
        return Err(Error::Config(format!("{} is not a MVIW payload", path.display())));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported payload version {version}")));
    }
    let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let expected = 16 + height * width * 3 * 4;
    if buf.len() != expected {
        return Err(Error::Config(format!(
            "payload {} has {} bytes, expected {expected}",
            path.display(),
            buf.len()
        )));
    }
    let data = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Image { width, height, data })
}

/// A dataset loaded back into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub scenes: Vec<LoadedScene>,
}

#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub seed: u64,
    pub references: Vec<(Image, Camera)>,
    pub targets: Vec<(Image, Camera)>,
}

fn quantize_f32(image: &mut Image) {
    for v in image.data.iter_mut() {
        *v = *v as f32 as f64;
    }
}

/// Render a dataset fully in memory. Pixel values are quantized through f32
/// so results match a disk round trip exactly.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let scene_params = spec.scene_params.unwrap_or_default();
    let conv = PixelConvention::Centers;
    let mut scenes = Vec::with_capacity(spec.n_scenes);
    for index in 0..spec.n_scenes {
        let seed = spec.scene_seed(index);
        let scene = Scene::generate(seed, &scene_params);
        let mut cam_rng = Rng::substream(seed, 1);
        let cams = sample_cameras(&mut cam_rng, spec.views_per_scene + spec.n_targets, spec)?;
        let mut references = Vec::new();
        let mut targets = Vec::new();
        for (v, cam) in cams.iter().enumerate() {
            let mut image = render(&scene, cam, conv)?;
            quantize_f32(&mut image);
            if v < spec.views_per_scene {
                references.push((image, *cam));
            } else {
                targets.push((image, *cam));
            }
        }
        scenes.push(LoadedScene {
            seed,
            references,
            targets,
        });
    }
    Ok(Dataset {
        spec: spec.clone(),
        scenes,
    })
}

/// Generate and write a dataset. Returns the manifest. Rendering may be
/// parallelized over scenes (`workers > 1`); file writes happen in a fixed
/// order so output bytes never depend on scheduling.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path, workers: usize) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let scene_params = spec.scene_params.unwrap_or_default();
    let conv = PixelConvention::Centers;

    let render_scene = |index: usize| -> Result<(ManifestScene, Vec<Image>)> {
        let seed = spec.scene_seed(index);
        let scene = Scene::generate(seed, &scene_params);
        // Substream 1 of the scene seed drives camera sampling.
        let mut cam_rng = Rng::substream(seed, 1);
        let total_views = spec.views_per_scene + spec.n_targets;
        let cams = sample_cameras(&mut cam_rng, total_views, spec)?;
        let mut views = Vec::with_capacity(total_views);
        let mut images = Vec::with_capacity(total_views);
        for (v, cam) in cams.iter().enumerate() {
            let role = if v < spec.views_per_scene { "reference" } else { "target" };
            let payload = format!("scene_{index:04}/view_{v:02}.bin");
            views.push(ManifestView::from_camera(cam, payload, role));
            images.push(render(&scene, cam, conv)?);
        }
        Ok((ManifestScene { index, seed, views }, images))
    };

    let indices: Vec<usize> = (0..spec.n_scenes).collect();
    let rendered: Vec<Result<(ManifestScene, Vec<Image>)>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| indices.par_iter().map(|&i| render_scene(i)).collect())
    } else {
        indices.iter().map(|&i| render_scene(i)).collect()
    };

    let mut scenes = Vec::with_capacity(spec.n_scenes);
    for item in rendered {
        let (scene_entry, images) = item?;
        let scene_dir = out_dir.join(format!("scene_{:04}", scene_entry.index));
        fs::create_dir_all(&scene_dir)?;
        for (view, image) in scene_entry.views.iter().zip(&images) {
            write_payload(&out_dir.join(&view.payload), image)?;
        }
        scenes.push(scene_entry);
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        scenes,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for scene in &manifest.scenes {
        let mut references = Vec::new();
        let mut targets = Vec::new();
        for view in &scene.views {
            let image = read_payload(&dir.join(&view.payload))?;
            let cam = view.camera()?;
            match view.role.as_str() {
                "reference" => references.push((image, cam)),
                "target" => targets.push((image, cam)),
                other => return Err(Error::Config(format!("unknown view role {other:?}"))),
            }
        }
        scenes.push(LoadedScene {
            seed: scene.seed,
            references,
            targets,
        });
    }
    Ok(Dataset {
        spec: manifest.spec,
        scenes,
    })
}

/// Re-render a loaded scene's views at a zoom factor (ground truth changes
/// with intrinsics). Scene content is rebuilt from the stored seed.
pub fn rerender_zoomed(scene_seed: u64, views: &[Camera], zoom: f64, params: &SceneParams) -> Result<Vec<(Image, Camera)>> {
    let scene = Scene::generate(scene_seed, params);
    let mut out = Vec::with_capacity(views.len());
    for cam in views {
        let zoomed = Camera::new(cam.intrinsics.zoomed(zoom)?, cam.extrinsics, cam.width, cam.height)?;
        let mut image = render(&scene, &zoomed, PixelConvention::Centers)?;
        quantize_f32(&mut image);
        out.push((image, zoomed));
    }
    Ok(out)
}

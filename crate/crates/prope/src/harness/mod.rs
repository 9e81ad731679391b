//! Run configuration and the command-level entry points behind the CLI:
//! dataset generation, training, evaluation (with view-count and zoom
//! conditions), the executable property suite, and the channel-allocation
//! ablation.
//!
//! Every command validates its full configuration before any side effect.
//! Training is single-threaded and deterministic for a given seed; the
//! worker flag parallelizes only across independent runs (ablation) or
//! scenes (data generation).

pub mod properties;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy, aggregate, psnr, summary_csv, EvalReport, SummaryRow};
use crate::model::{
    corrupt_episode, load_checkpoint, model_from_checkpoint, save_checkpoint, Episode, Model, ModelConfig, TaskHead,
};
use crate::synth::{build_dataset, generate_dataset, load_dataset, rerender_zoomed, Dataset, DatasetSpec};
use crate::tensor::{Adam, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Nvs,
    Cognition,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_steps() -> u64 {
    5000
}
fn default_batch() -> usize {
    1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_augment() -> bool {
    true
}
fn default_refs_per_episode() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
    /// Re-anchor each training episode's world frame by a random rigid
    /// transform. Images are untouched (a pure re-coordinatization), so
    /// this simulates the arbitrary world frames of real capture data;
    /// relative encodings are exactly invariant to it by construction.
    #[serde(default = "default_augment")]
    pub augment_world_frames: bool,
    /// Reference views sampled per NVS training episode from each scene's
    /// reference pool.
    #[serde(default = "default_refs_per_episode")]
    pub refs_per_episode: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: default_lr(),
            steps: default_steps(),
            batch_size: default_batch(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            augment_world_frames: default_augment(),
            refs_per_episode: default_refs_per_episode(),
        }
    }
}

impl OptimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

fn default_train_dir() -> PathBuf {
    PathBuf::from("data/train")
}
fn default_test_dir() -> PathBuf {
    PathBuf::from("data/test")
}
fn default_checkpoint() -> PathBuf {
    PathBuf::from("out/model.ckpt")
}
fn default_loss_log() -> PathBuf {
    PathBuf::from("out/loss.log")
}
fn default_report() -> PathBuf {
    PathBuf::from("out/report.csv")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_train_dir")]
    pub train_data: PathBuf,
    #[serde(default = "default_test_dir")]
    pub test_data: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default = "default_loss_log")]
    pub loss_log: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_data: default_train_dir(),
            test_data: default_test_dir(),
            checkpoint: default_checkpoint(),
            loss_log: default_loss_log(),
            report: default_report(),
        }
    }
}

/// Full run configuration; the JSON config file format. Unknown keys are
/// rejected, every field is validated before any work starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub model: ModelConfig,
    pub train_data: DatasetSpec,
    pub test_data: DatasetSpec,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_data.validate()?;
        self.test_data.validate()?;
        self.optim.validate()?;
        if self.train_data.seed == self.test_data.seed {
            return Err(Error::Config(
                "train and test dataset seeds must differ (disjoint scene seed ranges)".into(),
            ));
        }
        for (name, ds) in [("train_data", &self.train_data), ("test_data", &self.test_data)] {
            if ds.image_size != self.model.image_size {
                return Err(Error::Config(format!(
                    "{name} image_size {} != model image_size {}",
                    ds.image_size, self.model.image_size
                )));
            }
        }
        match self.task {
            Task::Nvs => {
                if self.model.head != TaskHead::Nvs {
                    return Err(Error::Config("task nvs requires model.head = nvs".into()));
                }
                if self.train_data.n_targets == 0 || self.test_data.n_targets == 0 {
                    return Err(Error::Config("nvs datasets need n_targets >= 1".into()));
                }
                if self.optim.refs_per_episode == 0 || self.train_data.views_per_scene < self.optim.refs_per_episode {
                    return Err(Error::Config(format!(
                        "train_data views_per_scene {} must cover refs_per_episode {}",
                        self.train_data.views_per_scene, self.optim.refs_per_episode
                    )));
                }
            }
            Task::Cognition => {
                if self.model.head != TaskHead::Cognition {
                    return Err(Error::Config("task cognition requires model.head = cognition".into()));
                }
                if self.train_data.views_per_scene < 2 || self.test_data.views_per_scene < 2 {
                    return Err(Error::Config("cognition datasets need >= 2 views per scene".into()));
                }
            }
        }
        Ok(())
    }
}

/// Evaluation condition: the standard test protocol, a reference-view
/// count, or a zoom factor applied to all test intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    Standard,
    Views(usize),
    Zoom(f64),
}

impl Condition {
    pub fn parse(s: &str) -> Result<Condition> {
        if s == "standard" {
            return Ok(Condition::Standard);
        }
        if let Some(v) = s.strip_prefix("views=") {
            let n: usize = v
                .parse()
                .map_err(|_| Error::Config(format!("bad view count in condition {s:?}")))?;
            if n == 0 {
                return Err(Error::Config("condition views=0 is invalid".into()));
            }
            return Ok(Condition::Views(n));
        }
        if let Some(v) = s.strip_prefix("zoom=") {
            let z: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad zoom factor in condition {s:?}")))?;
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config(format!("zoom factor {z} must be positive")));
            }
            return Ok(Condition::Zoom(z));
        }
        Err(Error::Config(format!(
            "unknown condition {s:?}; expected standard, views=<n>, or zoom=<f>"
        )))
    }

    pub fn echo(&self) -> String {
        match self {
            Condition::Standard => "standard".to_string(),
            Condition::Views(n) => format!("views={n}"),
            Condition::Zoom(z) => format!("zoom={z}"),
        }
    }
}

/// Outcome of one training run.
pub struct TrainOutcome {
    pub model: Model,
    pub data_rng: Rng,
    pub loss_log: Vec<(u64, f64)>,
}

/// Re-anchor an episode's cameras (references and targets) by `g`.
fn reanchor_nvs_episode(episode: &Episode, g: &crate::camera::SE3) -> Episode {
    let mut moved = episode.clone();
    let ref_cams: Vec<_> = moved.references.iter().map(|(_, c)| *c).collect();
    let newcams = crate::camera::reanchor_world(&ref_cams, g);
    for (i, (_, c)) in moved.references.iter_mut().enumerate() {
        *c = newcams[i];
    }
    moved.targets = crate::camera::reanchor_world(&moved.targets, g);
    moved
}

/// First `k` entries of a partial Fisher-Yates shuffle of 0..n.
fn sample_distinct(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = i + rng.index(n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Episode with the scene's references and one chosen target view.
fn nvs_episode(scene: &crate::synth::LoadedScene, target: usize) -> (Episode, Vec<crate::synth::Image>) {
    let refs = scene.references.clone();
    let (truth, cam) = &scene.targets[target];
    (Episode::nvs(refs, vec![*cam]), vec![truth.clone()])
}

/// Train a model on a dataset. Deterministic for a given config: model init
/// draws from substream 0 of the seed, data order from substream 1.
pub fn train(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    let mut init_rng = Rng::substream(config.seed, 0);
    let mut data_rng = Rng::substream(config.seed, 1);
    let mut model = Model::init(&config.model, &mut init_rng)?;
    let mut adam = Adam::with_betas(config.optim.lr, config.optim.beta1, config.optim.beta2, config.optim.eps);
    let mut loss_log = Vec::with_capacity(config.optim.steps as usize);
    let n_scenes = dataset.scenes.len();
    if n_scenes == 0 {
        return Err(Error::Config("dataset has no scenes".into()));
    }
    for step in 1..=config.optim.steps {
        model.zero_grads();
        let mut batch_loss = 0.0;
        for _ in 0..config.optim.batch_size {
            let scene = &dataset.scenes[data_rng.index(n_scenes)];
            let (episode, truths) = match config.task {
                Task::Nvs => {
                    // Sample distinct references from the scene's pool and
                    // one target view, all uniformly.
                    let refs = sample_distinct(&mut data_rng, scene.references.len(), config.optim.refs_per_episode);
                    let target = data_rng.index(scene.targets.len());
                    let references: Vec<_> = refs.iter().map(|&i| scene.references[i].clone()).collect();
                    let (truth, cam) = &scene.targets[target];
                    (Episode::nvs(references, vec![*cam]), vec![truth.clone()])
                }
                Task::Cognition => (corrupt_episode(&scene.references, &mut data_rng)?, Vec::new()),
            };
            if config.optim.augment_world_frames {
                let g = crate::camera::sample_se3(&mut data_rng, 1.0);
                episode = reanchor_nvs_episode(&episode, &g);
            }
            let loss = match config.task {
                Task::Nvs => model.loss_nvs(&episode, &truths)?,
                Task::Cognition => model.loss_cognition(&episode)?,
            };
            batch_loss += loss.item();
            loss.backward()?;
        }
        let scale = 1.0 / config.optim.batch_size as f64;
        let grads: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|(_, t)| {
                t.grad()
                    .map(|g| g.iter().map(|x| x * scale).collect())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        let mut ps = model.params_mut();
        let mut refs: Vec<&mut Tensor> = ps.iter_mut().map(|(_, t)| &mut **t).collect();
        adam.step(&mut refs, &grads)?;
        drop(ps);
        loss_log.push((step, batch_loss * scale));
    }
    Ok(TrainOutcome {
        model,
        data_rng,
        loss_log,
    })
}

/// Evaluate a model on every scene of a dataset under a condition.
///
/// NVS reports per-episode PSNR; cognition reports per-episode 0/1
/// correctness on deterministically corrupted episodes (substream 2 of each
/// scene seed, so labels are identical across schemes and training seeds).
///
/// Every test episode is presented in its own arbitrary world frame (a
/// deterministic rigid re-anchoring drawn from substream 3 of the scene
/// seed): deployment data has no canonical frame, and a canonical-frame
/// evaluation would overstate schemes that depend on one. Frame-invariant
/// schemes score identically either way.
pub fn evaluate(model: &Model, dataset: &Dataset, condition: Condition, task: Task, seed: u64) -> Result<EvalReport> {
    let mut values = Vec::with_capacity(dataset.scenes.len());
    let scene_params = dataset.spec.scene_params.unwrap_or_default();
    for scene in &dataset.scenes {
        match task {
            Task::Nvs => {
                // One evaluation episode per candidate target view, matching
                // the training episode shape.
                for target in 0..scene.targets.len() {
                    let (episode, truths) = match condition {
                        Condition::Standard => nvs_episode(scene, target),
                        Condition::Views(n) => {
                            if scene.references.len() < n {
                                return Err(Error::Config(format!(
                                    "condition views={n} but test scenes carry only {} references",
                                    scene.references.len()
                                )));
                            }
                            let (episode, truths) = nvs_episode(scene, target);
                            (Episode::nvs(episode.references[..n].to_vec(), episode.targets), truths)
                        }
                        Condition::Zoom(z) => {
                            let ref_cams: Vec<_> = scene.references.iter().map(|(_, c)| *c).collect();
                            let refs = rerender_zoomed(scene.seed, &ref_cams, z, &scene_params)?;
                            let tgt = rerender_zoomed(scene.seed, &[scene.targets[target].1], z, &scene_params)?;
                            let targets: Vec<_> = tgt.iter().map(|(_, c)| *c).collect();
                            let truths: Vec<_> = tgt.into_iter().map(|(img, _)| img).collect();
                            (Episode::nvs(refs, targets), truths)
                        }
                    };
                    let mut frame_rng = Rng::substream(scene.seed, 3 + target as u64);
                    let g = crate::camera::sample_se3(&mut frame_rng, 1.0);
                    let episode = reanchor_nvs_episode(&episode, &g);
                    let preds = model.forward_nvs(&episode)?;
                    let mut acc = 0.0;
                    for (pred, truth) in preds.iter().zip(&truths) {
                        acc += psnr(pred, truth)?;
                    }
                    values.push(acc / truths.len() as f64);
                }
            }
            Task::Cognition => {
                let mut corrupt_rng = Rng::substream(scene.seed, 2);
                let episode = match condition {
                    Condition::Standard => corrupt_episode(&scene.references, &mut corrupt_rng)?,
                    Condition::Views(n) => {
                        if scene.references.len() < n {
                            return Err(Error::Config(format!(
                                "condition views={n} but test scenes carry only {} references",
                                scene.references.len()
                            )));
                        }
                        corrupt_episode(&scene.references[..n], &mut corrupt_rng)?
                    }
                    Condition::Zoom(_) => {
                        return Err(Error::Config("zoom conditions apply to the nvs task only".into()))
                    }
                };
                let mut frame_rng = Rng::substream(scene.seed, 3);
                let g = crate::camera::sample_se3(&mut frame_rng, 1.0);
                let episode = reanchor_nvs_episode(&episode, &g);
                let probs = model.forward_cognition(&episode)?;
                let correct = accuracy(&[probs.data().to_vec()], &[episode.label.unwrap()])?;
                values.push(correct);
            }
        }
    }
    let metric = match task {
        Task::Nvs => "psnr",
        Task::Cognition => "accuracy",
    };
    EvalReport::new(&model.config.scheme.name(), &condition.echo(), metric, seed, values)
}

// ── commands ────────────────────────────────────────────────────────

/// Generate the train and test datasets named by the config.
pub fn cmd_gen_data(config: &RunConfig, workers: usize) -> Result<()> {
    config.validate()?;
    for (name, spec, dir) in [
        ("train", &config.train_data, &config.paths.train_data),
        ("test", &config.test_data, &config.paths.test_data),
    ] {
        let manifest = generate_dataset(spec, dir, workers.max(1))?;
        let views: usize = manifest.scenes.iter().map(|s| s.views.len()).sum();
        println!(
            "wrote {name} dataset: {} scenes, {views} views -> {}",
            manifest.scenes.len(),
            dir.display()
        );
    }
    Ok(())
}

/// Train per config, write the loss log and checkpoint.
///
/// The loss log file contains only deterministic fields (step and loss);
/// wall-clock progress goes to stdout.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let dataset = load_dataset(&config.paths.train_data)?;
    if dataset.spec != config.train_data {
        return Err(Error::Config(format!(
            "dataset on disk at {} does not match the config's train_data spec; regenerate with gen-data",
            config.paths.train_data.display()
        )));
    }
    let started = Instant::now();
    let outcome = train(config, &dataset)?;
    let print_every = (config.optim.steps / 10).max(1);
    for &(step, loss) in &outcome.loss_log {
        if step % print_every == 0 || step == config.optim.steps {
            println!(
                "step {step}/{} loss {loss:.6} ({:.1}s)",
                config.optim.steps,
                started.elapsed().as_secs_f64()
            );
        }
    }
    if let Some(parent) = config.paths.loss_log.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut log_text = String::new();
    for (step, loss) in &outcome.loss_log {
        log_text.push_str(&format!("{step} {loss}\n"));
    }
    fs::write(&config.paths.loss_log, log_text)?;
    save_checkpoint(&config.paths.checkpoint, &outcome.model, &outcome.data_rng, config.optim.steps)?;
    println!(
        "trained {} for {} steps in {:.1}s; checkpoint {}",
        config.model.scheme.name(),
        config.optim.steps,
        started.elapsed().as_secs_f64(),
        config.paths.checkpoint.display()
    );
    Ok(())
}

/// Evaluate a checkpoint under a condition; append a CSV row to the report
/// path (or `out` when given).
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    condition: Condition,
    out: Option<&Path>,
) -> Result<EvalReport> {
    config.validate()?;
    let ckpt_path = checkpoint.unwrap_or(&config.paths.checkpoint);
    let ckpt = load_checkpoint(ckpt_path)?;
    if ckpt.config != config.model {
        return Err(Error::Checkpoint(format!(
            "checkpoint at {} was trained with a different model config",
            ckpt_path.display()
        )));
    }
    let model = model_from_checkpoint(&ckpt)?;
    let dataset = load_dataset(&config.paths.test_data)?;
    if dataset.spec != config.test_data {
        return Err(Error::Config(format!(
            "dataset on disk at {} does not match the config's test_data spec",
            config.paths.test_data.display()
        )));
    }
    let report = evaluate(&model, &dataset, condition, config.task, config.seed)?;
    let rows = aggregate(std::slice::from_ref(&report))?;
    let csv = summary_csv(&rows);
    let out_path = out.unwrap_or(&config.paths.report);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    append_csv(out_path, &csv)?;
    print!("{csv}");
    Ok(report)
}

fn append_csv(path: &Path, csv: &str) -> Result<()> {
    let existing = fs::read_to_string(path).unwrap_or_default();
    let mut out = String::new();
    if existing.is_empty() {
        out.push_str(csv);
    } else {
        out.push_str(&existing);
        // Skip the header when appending.
        out.push_str(csv.split_once('\n').map(|(_, rest)| rest).unwrap_or(""));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Run one (scheme, seed) training + standard evaluation, in memory.
fn ablate_run(base: &RunConfig, scheme: &str, seed: u64, dataset: &Dataset, test: &Dataset) -> Result<(usize, EvalReport)> {
    let mut config = base.clone();
    config.model.scheme = crate::model::Scheme::parse(scheme)?;
    config.model.token_input = None;
    config.seed = seed;
    config.validate()?;
    let outcome = train(&config, dataset)?;
    let report = evaluate(&outcome.model, test, Condition::Standard, config.task, seed)?;
    Ok((outcome.model.param_count(), report))
}

/// Channel-allocation ablation: train full / proj-only / rope-only variants
/// (CamRay token input, matched budgets, three seeds each) and emit the
/// aggregated table.
pub fn cmd_ablate(config: &RunConfig, workers: usize, out: Option<&Path>) -> Result<Vec<SummaryRow>> {
    config.validate()?;
    let dataset = load_dataset(&config.paths.train_data)?;
    let test = load_dataset(&config.paths.test_data)?;
    let variants = ["prope+camray", "prope_proj_only+camray", "prope_rope_only+camray"];
    let seeds: Vec<u64> = (0..3).map(|i| config.seed + i).collect();
    let jobs: Vec<(String, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v.to_string(), s)))
        .collect();

    let results: Vec<Result<(usize, EvalReport)>> =
        run_jobs(workers, &jobs, |(scheme, seed)| ablate_run(config, scheme, *seed, &dataset, &test));

    let mut param_counts = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let (count, report) = r?;
        param_counts.push(count);
        reports.push(report);
    }
    if param_counts.iter().any(|&c| c != param_counts[0]) {
        return Err(Error::Property(format!(
            "ablation variants have unequal parameter counts: {param_counts:?}"
        )));
    }
    let rows = aggregate(&reports)?;
    let csv = summary_csv(&rows);
    let out_path = out.unwrap_or(&config.paths.report);
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    append_csv(out_path, &csv)?;
    print!("{csv}");
    println!("parameter count (all variants): {}", param_counts[0]);
    Ok(rows)
}

/// Run jobs on up to `workers` OS threads, results in job order.
pub fn run_jobs<J: Sync, T: Send>(workers: usize, jobs: &[J], f: impl Fn(&J) -> T + Sync) -> Vec<T> {
    let workers = workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<T>>> = (0..jobs.len()).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let value = f(&jobs[i]);
                *slots[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every job ran"))
        .collect()
}

/// In-memory dataset builder used by the property suite and tests.
pub fn dataset_for_check(spec: &DatasetSpec) -> Result<Dataset> {
    build_dataset(spec)
}

/// Small fixed configuration for the property suite's training checks.
pub(crate) fn tests_support_tiny_config() -> RunConfig {
    let mut model = ModelConfig::with_scheme("prope").expect("known scheme");
    model.image_size = 16;
    model.patch_size = 4;
    model.d_model = 16;
    model.n_heads = 2;
    model.head_dim = 8;
    model.n_layers = 2;
    let train = DatasetSpec {
        n_scenes: 3,
        views_per_scene: 2,
        n_targets: 1,
        image_size: 16,
        orbit_radius_min: 2.0,
        orbit_radius_max: 3.0,
        base_fov_deg: 45.0,
        zoom: crate::synth::ZoomMode::Fixed,
        split: crate::synth::Split::Train,
        seed: 1000,
        scene_params: None,
    };
    let test = DatasetSpec {
        seed: 2000,
        split: crate::synth::Split::Test,
        ..train.clone()
    };
    RunConfig {
        task: Task::Nvs,
        seed: 7,
        model,
        train_data: train,
        test_data: test,
        optim: OptimConfig {
            steps: 20,
            lr: 1e-3,
            ..OptimConfig::default()
        },
        paths: Paths::default(),
    }
}

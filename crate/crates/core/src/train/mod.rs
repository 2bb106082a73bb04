//! Single-worker training loop.

mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};

use crate::codec::{center, unroll, uncenter, ArchitectureConfig, CodecError, Model, TILE};
use crate::error::ShapeError;
use crate::image_io::{load_dir, ImageError};
use crate::loss::{block_dssim, block_weights, expand_weights, LossBaseline, LossError};
use crate::nn::{Graph, ParamSet, Tape};
use crate::tensor::{Scalar, Shape, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1.0;
pub const CLIP_NORM: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no image of at least {patch}x{patch} in a dataset of {images}")]
    NoLargeImage { patch: usize, images: usize },
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },
    #[error("gradient count {grads} does not match {params} parameters")]
    GradCount { grads: usize, params: usize },
    #[error("dataset: {0}")]
    Dataset(#[from] ImageError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Named hyperparameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Small model, 32x32 patches, four iterations, lr 0.5, batch 8.
    Desk,
    /// Priming runs at full scale: lr 0.5, batch 8, 3-priming.
    PaperPrime,
    /// Diffusion runs at full scale: lr 0.2, batch 4, 3-diffusion.
    PaperDiffusion,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Preset::Desk),
            "paper-prime" => Some(Preset::PaperPrime),
            "paper-diffusion" => Some(Preset::PaperDiffusion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::PaperPrime => "paper-prime",
            Preset::PaperDiffusion => "paper-diffusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Square patch side; a multiple of 16.
    pub patch_size: usize,
    /// Progressive iterations unrolled per step.
    pub iterations: usize,
    pub k_prime: usize,
    pub k_diffuse: usize,
    pub seed: u64,
    /// Directory of PNG images.
    pub dataset: PathBuf,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Receives `loss.csv` and checkpoints.
    pub output: PathBuf,
    pub architecture: ArchitectureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            learning_rate: 0.5,
            batch_size: 8,
            steps: 2000,
            patch_size: 32,
            iterations: 4,
            k_prime: 0,
            k_diffuse: 0,
            seed: 0,
            dataset: PathBuf::from("data/train"),
            checkpoint_interval: 500,
            output: PathBuf::from("runs/desk"),
            architecture: ArchitectureConfig::desk(),
        };
        match preset {
            Preset::Desk => base,
            Preset::PaperPrime => Self {
                learning_rate: 0.5,
                batch_size: 8,
                steps: 3_800_000,
                patch_size: 128,
                iterations: 16,
                k_prime: 3,
                checkpoint_interval: 10_000,
                output: PathBuf::from("runs/paper-prime"),
                architecture: ArchitectureConfig::default(),
                ..base
            },
            Preset::PaperDiffusion => Self {
                learning_rate: 0.2,
                batch_size: 4,
                steps: 2_200_000,
                patch_size: 128,
                iterations: 16,
                k_prime: 3,
                k_diffuse: 3,
                checkpoint_interval: 10_000,
                output: PathBuf::from("runs/paper-diffusion"),
                architecture: ArchitectureConfig::default(),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.patch_size == 0 || self.patch_size % TILE != 0 {
            return bad(format!("patch_size must be a positive multiple of {TILE}, got {}", self.patch_size));
        }
        if self.iterations == 0 || self.iterations > self.architecture.max_iterations {
            return bad(format!("iterations must be in 1..={}, got {}", self.architecture.max_iterations, self.iterations));
        }
        if self.k_diffuse > 0 && self.k_prime < self.k_diffuse {
            return bad(format!("k_prime {} must be at least k_diffuse {}", self.k_prime, self.k_diffuse));
        }
        self.model_architecture().validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    /// The architecture with this run's priming settings applied.
    pub fn model_architecture(&self) -> ArchitectureConfig {
        self.architecture.clone().with_priming(self.k_prime, self.k_diffuse)
    }
}

/// Random generator for the batch drawn at `step`. Each step gets its own
/// stream, so a resumed run draws the same patches as an uninterrupted one.
pub fn batch_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// A batch of patches and where each came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches<T> {
    /// `(count, p, p, 3)`, centred to [-0.5, 0.5].
    pub batch: Tensor<T>,
    /// `(image index, top, left)` per patch.
    pub origins: Vec<(usize, usize, usize)>,
}

/// Draws `count` square patches: a uniform image among those large
/// enough, then a uniform top-left corner.
pub fn sample_patches<T: Scalar>(
    images: &[Tensor<T>],
    patch_size: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Patches<T>, TrainError> {
    if patch_size == 0 || patch_size % TILE != 0 {
        return Err(TrainError::Config(format!("patch_size must be a positive multiple of {TILE}, got {patch_size}")));
    }
    let eligible: Vec<usize> = images
        .iter()
        .enumerate()
        .filter(|(_, im)| im.shape().height() >= patch_size && im.shape().width() >= patch_size)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(TrainError::NoLargeImage { patch: patch_size, images: images.len() });
    }
    let plane = patch_size * patch_size * 3;
    let mut data = Vec::with_capacity(count * plane);
    let mut origins = Vec::with_capacity(count);
    for _ in 0..count {
        let index = eligible[rng.random_range(0..eligible.len())];
        let s = images[index].shape();
        let top = rng.random_range(0..=s.height() - patch_size);
        let left = rng.random_range(0..=s.width() - patch_size);
        let crop = images[index].crop(0, top, left, patch_size, patch_size)?;
        data.extend_from_slice(center(&crop).data());
        origins.push((index, top, left));
    }
    let batch = Tensor::from_vec(Shape::new(count, patch_size, patch_size, 3), data)?;
    Ok(Patches { batch, origins })
}

/// Adam moments, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update with epsilon added to `sqrt(v_hat)`.
///
/// Fails without touching anything if a gradient is non-finite or shapes
/// disagree.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::GradCount { grads: grads.len(), params: params.len() });
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        crate::tensor::ensure_same(p.shape(), g.shape())?;
    }
    if !grads.iter().all(Tensor::all_finite) {
        return Err(TrainError::NonFinite { what: "gradient", step: state.step });
    }
    state.step += 1;
    let n = state.step as i32;
    let c1 = 1.0 - BETA1.powi(n);
    let c2 = 1.0 - BETA2.powi(n);
    for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let g = gv.as_f64();
            let m_new = BETA1 * mv.as_f64() + (1.0 - BETA1) * g;
            let v_new = BETA2 * vv.as_f64() + (1.0 - BETA2) * g * g;
            *mv = T::of(m_new);
            *vv = T::of(v_new);
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + EPSILON);
            *pv = T::of(pv.as_f64() - update);
        }
    }
    Ok(())
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = T::of(v.as_f64() * factor);
            }
        }
    }
    norm
}

/// What one optimizer step observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the completed step.
    pub step: u64,
    pub loss: f64,
    /// Baseline after this step's update.
    pub baseline: f64,
    pub grad_norm: f64,
}

/// Model, optimizer state and data for one run.
pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    adam: AdamState<f32>,
    baseline: LossBaseline,
    step: u64,
    images: Vec<Tensor<f32>>,
}

impl Trainer {
    /// Fresh weights drawn from the config seed.
    pub fn new(config: TrainConfig, images: Vec<Tensor<f32>>) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::init(config.model_architecture(), &mut rng)?;
        Ok(Self::assemble(config, images, Checkpoint::from_model(&model))?)
    }

    /// Continues from a checkpoint. The layout must match the config.
    pub fn resume(config: TrainConfig, images: Vec<Tensor<f32>>, checkpoint: Checkpoint) -> Result<Self, TrainError> {
        config.validate()?;
        checkpoint.check_architecture(&config.model_architecture())?;
        Self::assemble(config, images, checkpoint)
    }

    fn assemble(config: TrainConfig, images: Vec<Tensor<f32>>, checkpoint: Checkpoint) -> Result<Self, TrainError> {
        if !images.iter().any(|im| im.shape().height().min(im.shape().width()) >= config.patch_size) {
            return Err(TrainError::NoLargeImage { patch: config.patch_size, images: images.len() });
        }
        let mut model = Model::<f32>::zeros(config.model_architecture())?;
        *model.params_mut() = checkpoint.params;
        Ok(Self { config, model, adam: checkpoint.adam, baseline: checkpoint.baseline, step: checkpoint.step, images })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn baseline(&self) -> LossBaseline {
        self.baseline
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// Completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: self.model.config().clone(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            baseline: self.baseline,
            step: self.step,
        }
    }

    /// Samples a batch, unrolls the codec, and applies one clipped Adam
    /// update. On error the model and optimizer are left unchanged.
    pub fn step(&mut self) -> Result<StepReport, TrainError> {
        let c = &self.config;
        let mut rng = batch_rng(c.seed, self.step);
        let patches = sample_patches(&self.images, c.patch_size, c.batch_size, &mut rng)?;
        let target = patches.batch;
        let original01 = uncenter(&target);
        let failed = |what| TrainError::NonFinite { what, step: self.step + 1 };

        let (loss, batch_dssim, mut grads) = {
            let mut tape = Tape::new(self.model.params());
            let x = tape.constant(target.clone());
            let run = unroll(&mut tape, &self.model, &x, c.iterations)?;

            let dssim = run
                .reconstructions
                .iter()
                .map(|r| block_dssim(&original01, &uncenter(tape.value(r))))
                .collect::<Result<Vec<_>, _>>()?;
            let batch_dssim = dssim.iter().map(|d| d.sum_f64() / d.len() as f64).sum::<f64>() / dssim.len() as f64;
            if !batch_dssim.is_finite() {
                return Err(failed("dissimilarity"));
            }
            let mut baseline = self.baseline;
            baseline.initialize(batch_dssim)?;

            let mut total = None;
            for (r, d) in run.reconstructions.iter().zip(&dssim) {
                let w = expand_weights::<f32>(&block_weights(d, &baseline)?, target.shape());
                let term = tape.weighted_abs_sum(*r, target.clone(), w)?;
                total = Some(match total {
                    None => term,
                    Some(acc) => tape.add(&acc, &term)?,
                });
            }
            let norm = 1.0 / c.iterations as f64;
            let out = tape.scale(total.expect("at least one iteration"), f32::of(norm));
            let loss = tape.value(&out).data()[0].as_f64();
            if !loss.is_finite() {
                return Err(failed("loss"));
            }
            (loss, batch_dssim, tape.reverse_pass(1.0).into_params())
        };
        if !grads.iter().all(Tensor::all_finite) {
            return Err(failed("gradient"));
        }
        let grad_norm = clip_global_norm(&mut grads, CLIP_NORM);

        let mut baseline = self.baseline;
        baseline.initialize(batch_dssim)?;
        baseline.update(batch_dssim)?;
        adam_step(self.model.params_mut(), &grads, &mut self.adam, c.learning_rate)?;
        self.baseline = baseline;
        self.step += 1;
        Ok(StepReport { step: self.step, loss, baseline: baseline.value(), grad_norm })
    }
}

/// Loads every PNG under `dir` at training precision.
pub fn load_dataset(dir: &Path) -> Result<Vec<Tensor<f32>>, TrainError> {
    if !dir.is_dir() {
        return Err(TrainError::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(load_dir(dir)?.into_iter().map(|(_, im)| im.cast()).collect())
}

pub fn checkpoint_path(output: &Path, step: u64) -> PathBuf {
    output.join(format!("step_{step:08}.rpck"))
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Runs `trainer` to `config.steps`, appending `step,loss,baseline` rows to
/// `output/loss.csv` and writing checkpoints every `checkpoint_interval`
/// steps plus `final.rpck`. A failing step aborts the run; checkpoints
/// already on disk are kept.
pub fn run(trainer: &mut Trainer, mut on_step: impl FnMut(&StepReport)) -> Result<TrainSummary, TrainError> {
    let output = trainer.config.output.clone();
    std::fs::create_dir_all(&output).map_err(io_err(&output))?;
    let log_path = output.join("loss.csv");
    let fresh = trainer.step_count() == 0;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log = std::io::BufWriter::new(file);
    if fresh {
        writeln!(log, "step,loss,baseline").map_err(io_err(&log_path))?;
    }

    let mut losses = Vec::new();
    let mut checkpoints = Vec::new();
    let interval = trainer.config.checkpoint_interval;
    while trainer.step_count() < trainer.config.steps {
        let report = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                log.flush().map_err(io_err(&log_path))?;
                return Err(e);
            }
        };
        writeln!(log, "{},{},{}", report.step, report.loss, report.baseline).map_err(io_err(&log_path))?;
        losses.push(report.loss);
        on_step(&report);
        if interval > 0 && report.step % interval == 0 {
            let path = checkpoint_path(&output, report.step);
            trainer.checkpoint().save(&path)?;
            log::info!("wrote {}", path.display());
            checkpoints.push(path);
        }
    }
    log.flush().map_err(io_err(&log_path))?;
    let final_checkpoint = output.join("final.rpck");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary { losses, checkpoints, final_checkpoint })
}

/// Loads the dataset named in `config`, trains from scratch and writes all
/// artifacts.
pub fn train(config: TrainConfig) -> Result<TrainSummary, TrainError> {
    config.validate()?;
    let images = load_dataset(&config.dataset)?;
    let mut trainer = Trainer::new(config, images)?;
    run(&mut trainer, |_| {})
}

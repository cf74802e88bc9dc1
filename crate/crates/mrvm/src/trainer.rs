//! Pretrain and finetune loops.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mrvm_core::diff::Tensor;
use mrvm_core::math;
use mrvm_core::model::{self, ChunkStats, Model, PassOptions, RayInput};
use mrvm_core::mrvm::MrvmMode;
use mrvm_core::optim::{self, Adam, AdamConfig};
use mrvm_core::rng::{purpose, substream};
use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::checkpoint::{self, Checkpoint, Phase};
use crate::config::{lambda_schedule, TrainConfig};
use crate::data;
use crate::error::{Error, Result};
use crate::io::SceneData;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const LATEST_CKPT: &str = "latest.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const METRICS_HEADER: &str = "iter,L_nerf_c,L_nerf_f,L_mrvm,lambda_eff,psnr_train_sample,wallclock_s";
const MAX_CONSECUTIVE_ABORTS: usize = 10;

pub fn thread_pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| Error::Invalid(e.to_string()))
}

/// Per-iteration telemetry (one metrics CSV row).
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iter: u64,
    pub nerf_coarse: f64,
    pub nerf_fine: f64,
    pub mrvm: f64,
    pub lambda: f64,
    pub psnr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

impl StepRecord {
    pub fn csv_row(&self, wallclock: f64) -> String {
        format!("{},{},{},{},{},{},{:.3}", self.iter, self.nerf_coarse, self.nerf_fine, self.mrvm, self.lambda, self.psnr, wallclock)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied(StepRecord),
    /// Non-finite loss or gradient; parameters and optimizer untouched.
    Aborted { iter: u64, reason: String },
}

pub struct Gradients {
    pub grads: Vec<Tensor>,
    pub stats: ChunkStats,
    pub batch: Batch,
    pub lambda: f64,
}

/// The sampled batch of one iteration.
pub struct Batch {
    pub scene: usize,
    pub target: usize,
    pub refs: Vec<usize>,
    pub rays: Vec<RayInput>,
}

pub struct Trainer {
    pub phase: Phase,
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
    pub iteration: u64,
    pub events: Vec<String>,
}

impl Trainer {
    /// Fresh state. Finetuning from scratch builds a model without heads.
    pub fn new(phase: Phase, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut mc = config.model_config()?;
        if phase == Phase::Finetune {
            mc.mode = MrvmMode::Off;
        }
        let model = Model::new(mc, config.seed)?;
        let optimizer = Adam::new(adam_config(&config), &model.params);
        Ok(Trainer { phase, config, model, optimizer, iteration: 0, events: Vec::new() })
    }

    /// Finetuning state from a pretrained checkpoint: heads and EMA state
    /// dropped, fresh optimizer, iteration zero. Network sizes come from the
    /// checkpoint.
    pub fn finetune_from(ck: Checkpoint, mut config: TrainConfig) -> Result<Self> {
        config.model = ck.config.model.clone();
        config.validate()?;
        let mut model = ck.model;
        model.strip_heads();
        let optimizer = Adam::new(adam_config(&config), &model.params);
        Ok(Trainer { phase: Phase::Finetune, config, model, optimizer, iteration: 0, events: Vec::new() })
    }

    pub fn resume(ck: Checkpoint) -> Self {
        Trainer { phase: ck.phase, config: ck.config, model: ck.model, optimizer: ck.optimizer, iteration: ck.iteration, events: Vec::new() }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            phase: self.phase,
            iteration: self.iteration,
            config: self.config.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn lambda(&self, iter: u64) -> f64 {
        match self.phase {
            Phase::Pretrain if self.model.config.mode != MrvmMode::Off => lambda_schedule(iter, &self.config),
            _ => 0.0,
        }
    }

    /// Scene, target view, references and rays for `iter`; a function of
    /// the seed and the iteration only.
    pub fn sample_batch(&self, scenes: &[SceneData], iter: u64) -> Result<Batch> {
        let cfg = &self.config;
        if scenes.is_empty() {
            return Err(Error::Invalid("empty corpus".into()));
        }
        let mut rng = substream(cfg.seed, &[purpose::BATCH, iter]);
        let si = rng.random_range(0..scenes.len());
        let scene = &scenes[si];
        let pool = data::train_views(scene, cfg.train_views);
        let target = pool[rng.random_range(0..pool.len())];
        let cam = &scene.cameras[target];
        let refs = data::nearest_views(scene, cam, &pool, cfg.ref_views, Some(target))?;
        let cands = data::candidate_pixels(cam, &scene.bbox, cfg.bbox_sampling)?;
        if cands.is_empty() {
            return Err(Error::data(&scene.dir, format!("view {target}: no pixel sees the bounding box")));
        }
        let mut rays = Vec::with_capacity(cfg.batch_rays);
        for _ in 0..cfg.batch_rays {
            let (x, y) = cands[rng.random_range(0..cands.len())];
            rays.push(data::ray_input(scene, target, x, y, cfg.bbox_sampling)?.expect("candidate pixel has a ray"));
        }
        Ok(Batch { scene: si, target, refs, rays })
    }

    /// Gradients (store order) and telemetry of the batch of `iter` at the
    /// current parameters. Chunks run on `pool`; their gradients are summed
    /// in chunk order, so the worker count does not change the result.
    pub fn gradients(&self, scenes: &[SceneData], iter: u64, pool: &ThreadPool) -> Result<Gradients> {
        let batch = self.sample_batch(scenes, iter)?;
        let scene = &scenes[batch.scene];
        let refs = data::references(scene, &batch.refs);
        let lambda = self.lambda(iter);
        let pretrain = self.phase == Phase::Pretrain;
        // masking starts together with the auxiliary loss
        let mask_ratio = if pretrain && lambda > 0.0 { self.config.mask_ratio } else { 0.0 };
        let opts = PassOptions { pretrain, mask_ratio, jitter: self.config.jitter, lambda, normalizer: batch.rays.len() };
        let chunk = self.config.chunk_rays;
        let seed = self.config.seed;
        let model = &self.model;

        let (grads, stats) = pool.install(|| -> Result<(Vec<Tensor>, ChunkStats)> {
            let features = model.features(&refs)?;
            let parts: Vec<_> = batch
                .rays
                .par_chunks(chunk)
                .enumerate()
                .map(|(ci, rays)| {
                    let mut rngs = model::ray_rngs(seed, purpose::COARSE, iter, ci * chunk, rays.len());
                    model.chunk_gradients(&refs, &features, rays, &mut rngs, &opts)
                })
                .collect();
            let mut total = model::zeros_like(&model.params);
            let mut feat_grad = Tensor::zeros(features.rows(), features.cols());
            let mut stats = ChunkStats::default();
            for part in parts {
                let (pg, fg, st) = part?;
                model::add_all(&mut total, &pg);
                feat_grad.add_assign(&fg);
                stats.merge(st);
            }
            model::add_all(&mut total, &model.encoder_gradients(&refs, &feat_grad)?);
            Ok((total, stats))
        })?;
        Ok(Gradients { grads, stats, batch, lambda })
    }

    /// One optimizer step on the batch of the current iteration, followed by
    /// the EMA update when pretraining.
    pub fn step(&mut self, scenes: &[SceneData], pool: &ThreadPool) -> Result<StepOutcome> {
        let iter = self.iteration;
        let Gradients { mut grads, stats, batch, lambda } = self.gradients(scenes, iter, pool)?;
        let pretrain = self.phase == Phase::Pretrain;
        self.iteration += 1;
        if !stats.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            let reason = format!("non-finite loss {} or gradient", stats.loss);
            self.events.push(format!("iter={iter} aborted: {reason}"));
            return Ok(StepOutcome::Aborted { iter, reason });
        }
        let (grad_norm, clipped) = optim::clip_global_norm(&mut grads, self.config.clip_norm);
        if clipped {
            self.events.push(format!("iter={iter} clipped gradient norm {grad_norm}"));
        }
        self.optimizer.update(&mut self.model.params, &grads)?;
        if pretrain {
            self.model.ema_update(self.config.tau)?;
        }

        let mse: f64 = stats
            .color_fine
            .iter()
            .zip(&batch.rays)
            .map(|(c, r)| (0..3).map(|k| (c[k] - r.target[k]).powi(2)).sum::<f64>() / 3.0)
            .sum::<f64>()
            / batch.rays.len() as f64;
        Ok(StepOutcome::Applied(StepRecord {
            iter,
            nerf_coarse: ChunkStats::mean(&stats.nerf_coarse),
            nerf_fine: ChunkStats::mean(&stats.nerf_fine),
            mrvm: ChunkStats::mean(&stats.aux),
            lambda,
            psnr: if mse > 0.0 { -10.0 * math::log10(mse) } else { mrvm_core::metrics::PSNR_CAP },
            grad_norm,
            clipped,
        }))
    }
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig { lr: cfg.lr, ..AdamConfig::default() }
}

/// Outcome of a whole run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_checkpoint: PathBuf,
    pub last: Option<StepRecord>,
    pub aborted_steps: usize,
}

/// Keeps the CSV rows of iterations before `iteration` and returns the last
/// recorded wallclock.
fn prepare_metrics(path: &Path, iteration: u64) -> Result<(File, f64)> {
    let mut kept = vec![METRICS_HEADER.to_string()];
    let mut wall = 0.0;
    if iteration > 0 && path.exists() {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut cols = line.split(',');
            let it: u64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::data(path, "malformed metrics row"))?;
            if it < iteration {
                wall = line.rsplit(',').next().and_then(|s| s.parse().ok()).unwrap_or(0.0);
                kept.push(line);
            }
        }
    }
    let mut text = kept.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    Ok((f, wall))
}

/// Runs the remaining iterations, appending to `out/metrics.csv` and saving
/// `out/latest.ckpt` every `checkpoint_every` iterations and `out/final.ckpt`
/// at the end. Resuming from `latest.ckpt` continues the same streams.
pub fn run(trainer: &mut Trainer, scenes: &[SceneData], out: &Path, pool: &ThreadPool, progress: impl FnMut(&StepRecord)) -> Result<RunSummary> {
    let total = trainer.config.total_iters;
    run_until(trainer, scenes, out, pool, total, progress)
}

/// [`run`] stopped before iteration `until`; `latest.ckpt` then holds the
/// state to resume from, and `final.ckpt` is only written once the run is
/// complete.
pub fn run_until(
    trainer: &mut Trainer,
    scenes: &[SceneData],
    out: &Path,
    pool: &ThreadPool,
    until: u64,
    mut progress: impl FnMut(&StepRecord),
) -> Result<RunSummary> {
    let until = until.min(trainer.config.total_iters);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mpath = out.join(METRICS_FILE);
    let (mut metrics, wall0) = prepare_metrics(&mpath, trainer.iteration)?;
    let epath = out.join(EVENTS_FILE);
    let mut events = OpenOptions::new().create(true).append(true).open(&epath).map_err(|e| Error::io(&epath, e))?;
    let start = Instant::now();
    let mut last = None;
    let (mut aborted, mut consecutive) = (0, 0);
    while trainer.iteration < until {
        let outcome = trainer.step(scenes, pool)?;
        for e in trainer.events.drain(..) {
            writeln!(events, "{e}").map_err(|e| Error::io(&epath, e))?;
        }
        match outcome {
            StepOutcome::Applied(rec) => {
                consecutive = 0;
                let wall = wall0 + start.elapsed().as_secs_f64();
                writeln!(metrics, "{}", rec.csv_row(wall)).map_err(|e| Error::io(&mpath, e))?;
                progress(&rec);
                last = Some(rec);
            }
            StepOutcome::Aborted { iter, reason } => {
                aborted += 1;
                consecutive += 1;
                if consecutive >= MAX_CONSECUTIVE_ABORTS {
                    return Err(Error::Numerical(format!("{consecutive} consecutive aborted steps, last at iter {iter}: {reason}")));
                }
            }
        }
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.iteration.is_multiple_of(every) && trainer.iteration < until {
            checkpoint::save(&trainer.checkpoint(), &out.join(LATEST_CKPT))?;
        }
    }
    metrics.flush().map_err(|e| Error::io(&mpath, e))?;
    let ck = trainer.checkpoint();
    checkpoint::save(&ck, &out.join(LATEST_CKPT))?;
    let fin = out.join(FINAL_CKPT);
    if trainer.iteration >= trainer.config.total_iters {
        checkpoint::save(&ck, &fin)?;
    }
    Ok(RunSummary { final_checkpoint: fin, last, aborted_steps: aborted })
}

//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mrvm_core::gradcheck;
use mrvm_core::mrvm::MrvmMode;
use serde_json::json;

use crate::ablate;
use crate::checkpoint::{self, Phase};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval;
use crate::io::{self, GenSettings};
use crate::trainer::{self, Trainer, LATEST_CKPT};

#[derive(Debug, Parser)]
#[command(name = "mrvm", version, about = "Masked ray and view modeling on procedural radiance-field scenes")]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus of procedural scenes.
    GenScenes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generation settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Allow writing into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain with the auxiliary objective.
    Pretrain(TrainArgs),
    /// Finetune with the rendering loss only.
    Finetune {
        #[command(flatten)]
        train: TrainArgs,
        /// Pretrained checkpoint to start from.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Render one view with the fine branch to a PPM file.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM on the test views of every scene.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full pipeline on a micro model.
    Gradcheck {
        #[arg(long, default_value = "default")]
        mode: String,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Pretrain + finetune + eval for each mask ratio.
    AblateMask {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, default_value = "0.1,0.25,0.5,0.75,0.9")]
        ratios: String,
    },
    /// Pretrain + finetune + eval for each (training views, reference views) pair.
    AblateFewshot {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, default_value = "50x5,20x4,10x3")]
        configs: String,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory or corpus of scene directories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from `<out>/latest.ckpt`.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training corpus.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out scenes for evaluation.
    #[arg(long)]
    pub eval_data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub finetune_iters: u64,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Training config file plus per-field overrides.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch_rays: Option<usize>,
    #[arg(long)]
    pub chunk_rays: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub warmup_iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// default | featmask1 | featmask2 | off
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub ref_views: Option<usize>,
    #[arg(long)]
    pub train_views: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub n_coarse: Option<usize>,
    #[arg(long)]
    pub n_fine_extra: Option<usize>,
    /// Sample rays over the whole image instead of the bounding box.
    #[arg(long)]
    pub no_bbox: bool,
    #[arg(long)]
    pub no_jitter: bool,
}

impl Overrides {
    pub fn resolve(&self, workdir: &Path) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(&workdir.join(p))?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($field:ident, $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
        }
        set!(iters, c.total_iters);
        set!(batch_rays, c.batch_rays);
        set!(chunk_rays, c.chunk_rays);
        set!(lr, c.lr);
        set!(lambda, c.lambda_base);
        set!(mask_ratio, c.mask_ratio);
        set!(tau, c.tau);
        set!(seed, c.seed);
        set!(mode, c.mrvm_mode);
        set!(ref_views, c.ref_views);
        set!(checkpoint_every, c.checkpoint_every);
        set!(n_coarse, c.model.n_coarse);
        set!(n_fine_extra, c.model.n_fine_extra);
        if self.warmup_iters.is_some() {
            c.warmup_iters = self.warmup_iters;
        }
        if self.train_views.is_some() {
            c.train_views = self.train_views;
        }
        if self.no_bbox {
            c.bbox_sampling = false;
        }
        if self.no_jitter {
            c.jitter = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_metadata(path: &Path, command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Result<()> {
    let meta = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "seed": seed,
        "threads": threads,
        "config": config,
    });
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Invalid(e.to_string()))? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn run(cli: Cli) -> Result<()> {
    let wd = &cli.workdir;
    let pool = trainer::thread_pool(cli.threads)?;
    match cli.command {
        Command::GenScenes { out, count, seed, config, force } => {
            let settings = match config {
                Some(p) => io::read_json::<GenSettings>(&wd.join(p))?,
                None => GenSettings::default(),
            };
            let out = wd.join(out);
            if count == 0 {
                eprintln!("warning: --count 0, nothing to generate");
                return Ok(());
            }
            let manifests = pool.install(|| io::gen_corpus(&settings, &out, count, seed, force))?;
            write_metadata(&out.join("metadata.json"), "gen-scenes", seed, cli.threads, json!({ "count": count, "settings": to_value(&settings) }))?;
            let split = &manifests[0].splits;
            println!(
                "{} scenes in {}: {}x{}, {} views ({} train, {} test)",
                manifests.len(),
                out.display(),
                settings.width,
                settings.height,
                settings.views,
                split.train.len(),
                split.test.len()
            );
            Ok(())
        }
        Command::Pretrain(args) => train(wd, cli.threads, &pool, Phase::Pretrain, args, None),
        Command::Finetune { train: args, from } => train(wd, cli.threads, &pool, Phase::Finetune, args, from),
        Command::Render { ckpt, scene, view, out } => {
            let ck = checkpoint::load(&wd.join(&ckpt))?;
            let scene = io::load_dataset(&wd.join(&scene))?;
            let img = eval::render_view(&ck.model, &ck.config, &scene, view, &pool)?;
            let out = wd.join(out);
            io::write_ppm(&out, &img)?;
            let psnr = mrvm_core::metrics::psnr_capped(&img, &scene.images[view]).map_err(|e| Error::Invalid(e.to_string()))?;
            write_metadata(
                &out.with_extension("json"),
                "render",
                ck.config.seed,
                cli.threads,
                json!({ "ckpt": ckpt, "scene": scene.dir, "view": view, "psnr": psnr, "train": to_value(&ck.config) }),
            )?;
            println!("view {view}: PSNR {psnr:.2} dB -> {}", out.display());
            Ok(())
        }
        Command::Eval { ckpt, data, out } => {
            let ck = checkpoint::load(&wd.join(&ckpt))?;
            let scenes = io::load_corpus(&wd.join(&data))?;
            let reports = eval::evaluate(&ck.model, &ck.config, &scenes, &pool)?;
            let out = wd.join(out);
            eval::write_reports(&reports, &out)?;
            write_metadata(&out.join("metadata.json"), "eval", ck.config.seed, cli.threads, json!({ "ckpt": ckpt, "data": data, "train": to_value(&ck.config) }))?;
            for r in &reports {
                println!("{}: PSNR {:.2} dB, SSIM {:.4}", r.scene_id, r.mean_psnr, r.mean_ssim);
            }
            let (p, s) = eval::corpus_means(&reports);
            println!("mean: PSNR {p:.2} dB, SSIM {s:.4}");
            Ok(())
        }
        Command::Gradcheck { mode, seed, tolerance } => {
            let m = MrvmMode::parse(&mode).ok_or_else(|| Error::Usage(format!("unknown mode {mode:?}")))?;
            let r = gradcheck::pipeline_gradcheck(m, seed)?;
            println!("mode {mode}, seed {seed}: {} coordinates, max relative error {:.3e} at {:?}", r.coordinates, r.max_rel_error, r.worst);
            if r.max_rel_error > tolerance {
                return Err(Error::Numerical(format!("gradient check above tolerance {tolerance:e}")));
            }
            Ok(())
        }
        Command::AblateMask { sweep, ratios } => {
            let ratios = ablate::parse_ratios(&ratios)?;
            let (cfg, train, heldout, out) = sweep_inputs(wd, &sweep)?;
            write_metadata(&out.join("metadata.json"), "ablate-mask", cfg.seed, cli.threads, json!({ "ratios": ratios, "finetune_iters": sweep.finetune_iters, "train": to_value(&cfg) }))?;
            for (r, res) in ablate::ablate_mask(&train, &heldout, &cfg, sweep.finetune_iters, &ratios, &out, &pool)? {
                println!("ratio {r}: PSNR {:.2} dB, SSIM {:.4}", res.psnr, res.ssim);
            }
            Ok(())
        }
        Command::AblateFewshot { sweep, configs } => {
            let configs = ablate::parse_fewshot(&configs)?;
            let (cfg, train, heldout, out) = sweep_inputs(wd, &sweep)?;
            write_metadata(&out.join("metadata.json"), "ablate-fewshot", cfg.seed, cli.threads, json!({ "configs": configs, "finetune_iters": sweep.finetune_iters, "train": to_value(&cfg) }))?;
            for ((n, s), res) in ablate::ablate_fewshot(&train, &heldout, &cfg, sweep.finetune_iters, &configs, &out, &pool)? {
                println!("{n} views / {s} refs: PSNR {:.2} dB, SSIM {:.4}", res.psnr, res.ssim);
            }
            Ok(())
        }
    }
}

type SweepInputs = (TrainConfig, Vec<io::SceneData>, Vec<io::SceneData>, PathBuf);

fn sweep_inputs(wd: &Path, sweep: &SweepArgs) -> Result<SweepInputs> {
    let cfg = sweep.overrides.resolve(wd)?;
    let train = io::load_corpus(&wd.join(&sweep.data))?;
    let heldout = io::load_corpus(&wd.join(&sweep.eval_data))?;
    Ok((cfg, train, heldout, wd.join(&sweep.out)))
}

fn train(wd: &Path, threads: usize, pool: &rayon::ThreadPool, phase: Phase, args: TrainArgs, from: Option<PathBuf>) -> Result<()> {
    let out = wd.join(&args.out);
    let scenes = io::load_corpus(&wd.join(&args.data))?;
    let mut t = if args.resume {
        let ck = checkpoint::load(&out.join(LATEST_CKPT))?;
        if ck.phase != phase {
            return Err(Error::Usage(format!("{} holds a {} run", out.display(), ck.phase.as_str())));
        }
        Trainer::resume(ck)
    } else {
        let cfg = args.overrides.resolve(wd)?;
        match from {
            Some(p) => Trainer::finetune_from(checkpoint::load(&wd.join(p))?, cfg)?,
            None => Trainer::new(phase, cfg)?,
        }
    };
    write_metadata(
        &out.join("metadata.json"),
        phase.as_str(),
        t.config.seed,
        threads,
        json!({ "data": args.data, "resume": args.resume, "train": to_value(&t.config), "optimizer": "adam", "clip_norm": t.config.clip_norm }),
    )?;
    let total = t.config.total_iters;
    let summary = trainer::run(&mut t, &scenes, &out, pool, |r| {
        if r.iter % 100 == 0 || r.iter + 1 == total {
            eprintln!("iter {:>6}  nerf_c {:.5}  nerf_f {:.5}  mrvm {:.4}  lambda {:.4}  psnr {:.2}", r.iter, r.nerf_coarse, r.nerf_fine, r.mrvm, r.lambda, r.psnr);
        }
    })?;
    println!("{} finished: {}", phase.as_str(), summary.final_checkpoint.display());
    if summary.aborted_steps > 0 {
        eprintln!("warning: {} steps aborted on non-finite values (see events.log)", summary.aborted_steps);
    }
    Ok(())
}

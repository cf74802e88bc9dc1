//! Training configuration: JSON file plus command-line overrides.

use std::path::Path;

use mrvm_core::model::ModelConfig;
use mrvm_core::mrvm::MrvmMode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network sizes and sample counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub feature_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub n_coarse: usize,
    pub n_fine_extra: usize,
    pub depth_encoding: bool,
    pub view_dirs: bool,
    pub background: [f64; 3],
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            feature_dim: m.feature_dim,
            token_dim: m.token_dim,
            hidden: m.hidden,
            latent_dim: m.latent_dim,
            proj_hidden: m.proj_hidden,
            proj_dim: m.proj_dim,
            n_coarse: m.n_coarse,
            n_fine_extra: m.n_fine_extra,
            depth_encoding: m.depth_encoding,
            view_dirs: m.view_dirs,
            background: m.background,
        }
    }
}

impl ModelSettings {
    pub fn to_model_config(&self, mode: MrvmMode) -> ModelConfig {
        ModelConfig {
            feature_dim: self.feature_dim,
            token_dim: self.token_dim,
            hidden: self.hidden,
            latent_dim: self.latent_dim,
            proj_hidden: self.proj_hidden,
            proj_dim: self.proj_dim,
            n_coarse: self.n_coarse,
            n_fine_extra: self.n_fine_extra,
            depth_encoding: self.depth_encoding,
            view_dirs: self.view_dirs,
            mode,
            background: self.background,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub batch_rays: usize,
    /// Rays per tape; fixed so results do not depend on the worker count.
    pub chunk_rays: usize,
    pub lr: f64,
    pub lambda_base: f64,
    pub mask_ratio: f64,
    pub tau: f64,
    pub mrvm_start_frac: f64,
    /// Defaults to 10% of `total_iters` when absent.
    pub warmup_iters: Option<u64>,
    /// Reference views per target view.
    pub ref_views: usize,
    /// Few-shot cap on the training views used per scene.
    pub train_views: Option<usize>,
    pub seed: u64,
    pub mrvm_mode: String,
    pub bbox_sampling: bool,
    pub jitter: bool,
    pub clip_norm: f64,
    pub checkpoint_every: u64,
    pub model: ModelSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 2000,
            batch_rays: 64,
            chunk_rays: 16,
            lr: 5e-4,
            lambda_base: 0.1,
            mask_ratio: 0.5,
            tau: 0.99,
            mrvm_start_frac: 0.10,
            warmup_iters: None,
            ref_views: 3,
            train_views: None,
            seed: 0,
            mrvm_mode: MrvmMode::Default.as_str().to_string(),
            bbox_sampling: true,
            jitter: true,
            clip_norm: 10.0,
            checkpoint_every: 500,
            model: ModelSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TrainConfig = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mode(&self) -> Result<MrvmMode> {
        MrvmMode::parse(&self.mrvm_mode).ok_or_else(|| Error::Invalid(format!("unknown mrvm_mode {:?}", self.mrvm_mode)))
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_iters.unwrap_or(self.total_iters / 10)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(self.model.to_model_config(self.mode()?))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        self.mode()?;
        if self.total_iters == 0 || self.batch_rays == 0 || self.chunk_rays == 0 {
            return bad("total_iters, batch_rays and chunk_rays must be positive");
        }
        if !(0.0..=1.0).contains(&self.mrvm_start_frac) {
            return bad("mrvm_start_frac must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0,1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0) || !(self.lambda_base >= 0.0) {
            return bad("lr and clip_norm must be positive, lambda_base non-negative");
        }
        if self.ref_views == 0 || self.model.n_coarse == 0 {
            return bad("ref_views and n_coarse must be positive");
        }
        if self.train_views == Some(0) {
            return bad("train_views must be positive");
        }
        Ok(())
    }
}

/// `λ_eff`: zero until `mrvm_start_frac·total_iters`, then a linear ramp to
/// `lambda_base` over the warmup, then constant.
pub fn lambda_schedule(iter: u64, cfg: &TrainConfig) -> f64 {
    let start = cfg.mrvm_start_frac * cfg.total_iters as f64;
    let it = iter as f64;
    if it < start {
        return 0.0;
    }
    let warm = cfg.warmup() as f64;
    if warm == 0.0 {
        return cfg.lambda_base;
    }
    cfg.lambda_base * ((it - start) / warm).min(1.0)
}

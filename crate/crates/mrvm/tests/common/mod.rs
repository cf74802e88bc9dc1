#![allow(dead_code)]

use std::path::Path;

use mrvm::config::{ModelSettings, TrainConfig};
use mrvm::io::{self, GenSettings, SceneData};

pub fn tiny_settings() -> GenSettings {
    GenSettings { width: 16, height: 16, views: 12, test_views: 2, ..GenSettings::default() }
}

pub fn tiny_model() -> ModelSettings {
    ModelSettings {
        feature_dim: 4,
        token_dim: 8,
        hidden: 12,
        latent_dim: 8,
        proj_hidden: 8,
        proj_dim: 6,
        n_coarse: 8,
        n_fine_extra: 4,
        ..ModelSettings::default()
    }
}

pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        total_iters: 6,
        batch_rays: 12,
        chunk_rays: 4,
        ref_views: 2,
        checkpoint_every: 3,
        seed: 5,
        model: tiny_model(),
        ..TrainConfig::default()
    }
}

pub fn tiny_corpus(dir: &Path, count: usize, seed: u64) -> Vec<SceneData> {
    io::gen_corpus(&tiny_settings(), dir, count, seed, false).unwrap();
    io::load_corpus(dir).unwrap()
}

/// Metrics CSV without the wallclock column.
pub fn metrics_without_clock(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

//! Full-image rendering with the fine branch and PSNR/SSIM reports.

use std::fs;
use std::path::Path;

use mrvm_core::image::Image;
use mrvm_core::metrics;
use mrvm_core::model::{self, Model, RayInput};
use mrvm_core::rng::purpose;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::io::SceneData;

/// Rays per forward tape during evaluation.
pub const EVAL_CHUNK: usize = 64;

/// Renders `view` of `scene` from the nearest training views (never the view
/// itself). With bounding-box sampling, rays that miss the box take the
/// background color directly.
pub fn render_view(model: &Model, cfg: &TrainConfig, scene: &SceneData, view: usize, pool: &ThreadPool) -> Result<Image> {
    let n = scene.cameras.len();
    if view >= n {
        return Err(Error::Usage(format!("view {view} out of range (scene has {n})")));
    }
    let cam = &scene.cameras[view];
    let train = data::train_views(scene, cfg.train_views);
    let refs_idx = data::nearest_views(scene, cam, &train, cfg.ref_views, Some(view))?;
    let refs = data::references(scene, &refs_idx);
    let (w, h) = (cam.width, cam.height);
    let mut img = Image::filled(w, h, model.config.background);
    let mut pixels: Vec<(usize, RayInput)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let Some(r) = data::ray_input(scene, view, x, y, cfg.bbox_sampling)? {
                pixels.push((y * w + x, r));
            }
        }
    }
    let colors: Vec<[f64; 3]> = pool.install(|| -> Result<Vec<[f64; 3]>> {
        let features = model.features(&refs)?;
        let parts: Vec<Result<Vec<[f64; 3]>>> = pixels
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let rays: Vec<RayInput> = chunk.iter().map(|p| p.1).collect();
                let mut rngs = model::ray_rngs(cfg.seed, purpose::EVAL, view as u64, chunk[0].0, rays.len());
                Ok(model.render(&refs, &features, &rays, &mut rngs)?.color_fine)
            })
            .collect();
        let mut out = Vec::with_capacity(pixels.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    })?;
    for ((idx, _), c) in pixels.iter().zip(colors) {
        img.set_pixel(idx % w, idx / w, c);
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_id: String,
    pub views: Vec<ViewScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Scores the given views of one scene. PSNR is capped at 99 dB.
pub fn evaluate_scene(model: &Model, cfg: &TrainConfig, scene: &SceneData, views: &[usize], pool: &ThreadPool) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::data(&scene.dir, "no views to evaluate"));
    }
    let mut scores = Vec::with_capacity(views.len());
    for &v in views {
        let img = render_view(model, cfg, scene, v, pool)?;
        let gt = &scene.images[v];
        let psnr = metrics::psnr_capped(&img, gt).map_err(|e| Error::Invalid(e.to_string()))?;
        let ssim = metrics::ssim(&img, gt).map_err(|e| Error::Invalid(e.to_string()))?;
        scores.push(ViewScore { view: v, psnr, ssim });
    }
    let k = scores.len() as f64;
    Ok(EvalReport {
        scene_id: scene.manifest.scene_id.clone(),
        mean_psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / k,
        mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / k,
        views: scores,
    })
}

/// Test-split evaluation of every scene.
pub fn evaluate(model: &Model, cfg: &TrainConfig, scenes: &[SceneData], pool: &ThreadPool) -> Result<Vec<EvalReport>> {
    scenes.iter().map(|s| evaluate_scene(model, cfg, s, &s.manifest.splits.test, pool)).collect()
}

/// Mean over scenes of the per-scene mean PSNR and SSIM.
pub fn corpus_means(reports: &[EvalReport]) -> (f64, f64) {
    let k = reports.len().max(1) as f64;
    (reports.iter().map(|r| r.mean_psnr).sum::<f64>() / k, reports.iter().map(|r| r.mean_ssim).sum::<f64>() / k)
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("scene_id,view,psnr,ssim\n");
    for r in reports {
        for v in &r.views {
            s.push_str(&format!("{},{},{},{}\n", r.scene_id, v.view, v.psnr, v.ssim));
        }
        s.push_str(&format!("{},mean,{},{}\n", r.scene_id, r.mean_psnr, r.mean_ssim));
    }
    s
}

/// Writes `eval.csv` and `eval.json` into `out`.
pub fn write_reports(reports: &[EvalReport], out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join("eval.csv");
    fs::write(&csv, reports_csv(reports)).map_err(|e| Error::io(&csv, e))?;
    let json = out.join("eval.json");
    let text = serde_json::to_string_pretty(reports).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
}

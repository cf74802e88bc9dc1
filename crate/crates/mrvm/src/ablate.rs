//! Pretrain → finetune → evaluate pipeline and the sweeps built on it.

use std::fs;
use std::path::Path;

use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Phase};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::io::SceneData;
use crate::trainer::{self, Trainer};

pub const DEFAULT_RATIOS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
pub const DEFAULT_FEWSHOT: [(usize, usize); 3] = [(50, 5), (20, 4), (10, 3)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub psnr: f64,
    pub ssim: f64,
    pub reports: Vec<EvalReport>,
}

/// Pretrains with `cfg` under `out/pretrain`, finetunes for
/// `finetune_iters` under `out/finetune`, then evaluates the test views of
/// `eval_scenes` and writes the reports to `out/eval`.
pub fn pipeline(
    train_scenes: &[SceneData],
    eval_scenes: &[SceneData],
    cfg: &TrainConfig,
    finetune_iters: u64,
    out: &Path,
    pool: &ThreadPool,
) -> Result<PipelineResult> {
    let mut pre = Trainer::new(Phase::Pretrain, cfg.clone())?;
    let summary = trainer::run(&mut pre, train_scenes, &out.join("pretrain"), pool, |_| {})?;
    let ck = checkpoint::load(&summary.final_checkpoint)?;
    let ft_cfg = TrainConfig { total_iters: finetune_iters, mrvm_mode: "off".into(), ..cfg.clone() };
    let mut ft = Trainer::finetune_from(ck, ft_cfg)?;
    trainer::run(&mut ft, train_scenes, &out.join("finetune"), pool, |_| {})?;
    let reports = eval::evaluate(&ft.model, &ft.config, eval_scenes, pool)?;
    eval::write_reports(&reports, &out.join("eval"))?;
    let (psnr, ssim) = eval::corpus_means(&reports);
    Ok(PipelineResult { psnr, ssim, reports })
}

pub fn parse_ratios(s: &str) -> Result<Vec<f64>> {
    let ratios = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad ratio {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Usage(format!("mask ratio {r} outside [0,1]")));
    }
    Ok(ratios)
}

/// `"50x5,20x4"` → `[(50,5),(20,4)]` (training views × reference views).
pub fn parse_fewshot(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|t| {
            let (a, b) = t.trim().split_once('x').ok_or_else(|| Error::Usage(format!("expected NxS, got {t:?}")))?;
            let n = a.parse().map_err(|_| Error::Usage(format!("bad view count {a:?}")))?;
            let r = b.parse().map_err(|_| Error::Usage(format!("bad reference count {b:?}")))?;
            if r == 0 || n <= r {
                return Err(Error::Usage(format!("{t}: need more training views than references")));
            }
            Ok((n, r))
        })
        .collect()
}

fn write_csv(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One pipeline per mask ratio, every run with the same seed. Writes
/// `out/ablate_mask.csv` with columns `ratio,psnr,ssim`.
pub fn ablate_mask(
    train: &[SceneData],
    eval_scenes: &[SceneData],
    cfg: &TrainConfig,
    finetune_iters: u64,
    ratios: &[f64],
    out: &Path,
    pool: &ThreadPool,
) -> Result<Vec<(f64, PipelineResult)>> {
    let mut rows = Vec::new();
    let mut csv = String::from("ratio,psnr,ssim\n");
    for &r in ratios {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Usage(format!("mask ratio {r} outside [0,1]")));
        }
        let c = TrainConfig { mask_ratio: r, ..cfg.clone() };
        let res = pipeline(train, eval_scenes, &c, finetune_iters, &out.join(format!("ratio_{r}")), pool)?;
        csv.push_str(&format!("{r},{},{}\n", res.psnr, res.ssim));
        rows.push((r, res));
    }
    write_csv(&out.join("ablate_mask.csv"), &csv)?;
    Ok(rows)
}

/// One pipeline per (training views, reference views) pair. Writes
/// `out/ablate_fewshot.csv` with columns `train_views,ref_views,psnr,ssim`.
pub fn ablate_fewshot(
    train: &[SceneData],
    eval_scenes: &[SceneData],
    cfg: &TrainConfig,
    finetune_iters: u64,
    configs: &[(usize, usize)],
    out: &Path,
    pool: &ThreadPool,
) -> Result<Vec<((usize, usize), PipelineResult)>> {
    let mut rows = Vec::new();
    let mut csv = String::from("train_views,ref_views,psnr,ssim\n");
    for &(n, s) in configs {
        let c = TrainConfig { train_views: Some(n), ref_views: s, ..cfg.clone() };
        let res = pipeline(train, eval_scenes, &c, finetune_iters, &out.join(format!("views_{n}x{s}")), pool)?;
        csv.push_str(&format!("{n},{s},{},{}\n", res.psnr, res.ssim));
        rows.push(((n, s), res));
    }
    write_csv(&out.join("ablate_fewshot.csv"), &csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_ratios("0.1, 0.5,0.9").unwrap(), vec![0.1, 0.5, 0.9]);
        assert!(parse_ratios("0.5,1.2").is_err());
        assert!(parse_ratios("-0.1").is_err());
        assert_eq!(parse_fewshot("50x5,10x3").unwrap(), vec![(50, 5), (10, 3)]);
        assert!(parse_fewshot("3x5").is_err());
        assert!(parse_fewshot("10-3").is_err());
    }
}

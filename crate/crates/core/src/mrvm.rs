//! Latent alignment between the masked fine branch and the unmasked target.
//!
//! Online path: `z^f → θ → φ`. Target path: `stopgrad(z^c) → Θ`, where `Θ`
//! lives in a separate store and only moves by EMA toward `θ`.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use rand::Rng;

use crate::diff::{Bound, DiffError, ParamStore, Tape, Tensor, Var, NORMALIZE_EPS};
use crate::math;
use crate::nn;

pub const PROJ: &str = "proj";
pub const PRED: &str = "pred";
pub const PROJ_TARGET: &str = "proj_target";
pub const FEATMASK1_DECODER: &str = "fm1.dec";
/// Prefix of the EMA trunk copy used as the target in `featmask2` mode.
pub const FINE_TARGET: &str = "fine_target";

/// Which self-supervised target, if any, accompanies pretraining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MrvmMode {
    #[default]
    Default,
    FeatMask1,
    FeatMask2,
    Off,
}

impl MrvmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MrvmMode::Default => "default",
            MrvmMode::FeatMask1 => "featmask1",
            MrvmMode::FeatMask2 => "featmask2",
            MrvmMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "default" => Some(MrvmMode::Default),
            "featmask1" => Some(MrvmMode::FeatMask1),
            "featmask2" => Some(MrvmMode::FeatMask2),
            "off" => Some(MrvmMode::Off),
            _ => None,
        }
    }

    /// Whether pretraining masks the fine-branch tokens in this mode.
    pub fn masks(self) -> bool {
        self != MrvmMode::Off
    }

    /// Whether the projector, predictor and EMA target are used.
    pub fn uses_projector(self) -> bool {
        matches!(self, MrvmMode::Default | MrvmMode::FeatMask2)
    }
}

impl fmt::Display for MrvmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub proj_dim: usize,
    pub token_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { latent_dim: 32, hidden: 32, proj_dim: 16, token_dim: 32 }
    }
}

/// Online projector θ and predictor φ in `params`; `Θ` copied from θ into `ema`.
pub fn init_heads<R: Rng>(params: &mut ParamStore, ema: &mut ParamStore, rng: &mut R, cfg: &HeadConfig) -> Result<(), DiffError> {
    nn::init_mlp2(params, rng, PROJ, cfg.latent_dim, cfg.hidden, cfg.proj_dim)?;
    nn::init_mlp2(params, rng, PRED, cfg.proj_dim, cfg.hidden, cfg.proj_dim)?;
    copy_prefix(params, ema, PROJ, PROJ_TARGET)
}

/// Reconstruction decoder for the `featmask1` variant.
pub fn init_featmask1<R: Rng>(params: &mut ParamStore, rng: &mut R, cfg: &HeadConfig) -> Result<(), DiffError> {
    nn::init_mlp2(params, rng, FEATMASK1_DECODER, cfg.latent_dim, cfg.hidden, cfg.token_dim)
}

/// Inserts copies of every `src.*` tensor of `from` into `to` as `dst.*`.
pub fn copy_prefix(from: &ParamStore, to: &mut ParamStore, src: &str, dst: &str) -> Result<(), DiffError> {
    let lead = format!("{src}.");
    for (name, t) in from.iter() {
        if let Some(rest) = name.strip_prefix(&lead) {
            to.insert(&format!("{dst}.{rest}"), t.clone())?;
        }
    }
    Ok(())
}

/// `Θ ← τΘ + (1−τ)θ` for every `dst.*` tensor in `target` paired with `src.*` in `online`.
pub fn ema_update(target: &mut ParamStore, online: &ParamStore, src: &str, dst: &str, tau: f64) -> Result<(), DiffError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(DiffError::InvalidArgument { op: "ema_update", reason: "tau must lie in [0, 1]" });
    }
    let lead = format!("{dst}.");
    let names: Vec<_> = target.names().iter().filter(|n| n.starts_with(&lead)).cloned().collect();
    for name in names {
        let theta = online.get(&format!("{src}.{}", &name[lead.len()..]))?;
        let big = target.get_mut(&name)?;
        if big.shape() != theta.shape() {
            return Err(DiffError::ShapeMismatch { op: "ema_update", left: big.shape(), right: theta.shape() });
        }
        for (a, &b) in big.data_mut().iter_mut().zip(theta.data()) {
            *a = tau * *a + (1.0 - tau) * b;
        }
    }
    Ok(())
}

/// `z̄^c = Θ(stopgrad(z^c))`. `target` must be bound frozen.
pub fn target_project(tape: &mut Tape, target: &Bound<'_>, z_coarse: Var) -> Result<Var, DiffError> {
    let detached = tape.constant(tape.value(z_coarse).clone());
    nn::mlp2(tape, target, PROJ_TARGET, detached)
}

/// `z̄^f = φ(θ(z^f))`.
pub fn online_project_predict(tape: &mut Tape, params: &Bound<'_>, z_fine: Var) -> Result<Var, DiffError> {
    let p = nn::mlp2(tape, params, PROJ, z_fine)?;
    nn::mlp2(tape, params, PRED, p)
}

/// Per-ray alignment loss plus the number of degenerate pairs skipped.
#[derive(Clone, Copy, Debug)]
pub struct AlignLoss {
    /// `[rays, 1]`.
    pub per_ray: Var,
    pub degenerate: usize,
}

/// `(1/N_c) Σ ‖ẑ^f − ẑ^c‖²` per ray over consecutive groups of `pairs_per_ray`
/// rows. Pairs where either vector has norm ≤ 1e-12 contribute 0 and are counted.
pub fn mrvm_loss(tape: &mut Tape, online: Var, target: Var, pairs_per_ray: usize) -> Result<AlignLoss, DiffError> {
    let (to, tt) = (tape.value(online), tape.value(target));
    if to.shape() != tt.shape() {
        return Err(DiffError::ShapeMismatch { op: "mrvm_loss", left: to.shape(), right: tt.shape() });
    }
    let live: Vec<f64> = (0..to.rows())
        .map(|r| {
            let ok = row_norm(to.row_slice(r)) > NORMALIZE_EPS && row_norm(tt.row_slice(r)) > NORMALIZE_EPS;
            if ok { 1.0 } else { 0.0 }
        })
        .collect();
    let degenerate = live.iter().filter(|&&v| v == 0.0).count();
    let a = tape.normalize(online);
    let b = tape.normalize(target);
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    let per_pair = tape.row_sum(d2);
    let per_pair = if degenerate > 0 {
        let keep = tape.constant(Tensor::column(&live));
        tape.mul(per_pair, keep)?
    } else {
        per_pair
    };
    let per_ray = tape.group_mean(per_pair, pairs_per_ray)?;
    Ok(AlignLoss { per_ray, degenerate })
}

fn row_norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// `‖a/‖a‖ − b/‖b‖‖²`.
pub fn pair_loss_normalized(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (row_norm(a), row_norm(b));
    if na <= NORMALIZE_EPS || nb <= NORMALIZE_EPS {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x / na - y / nb) * (x / na - y / nb)).sum()
}

/// `2 − 2·cos(a, b)`.
pub fn pair_loss_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (row_norm(a), row_norm(b));
    if na <= NORMALIZE_EPS || nb <= NORMALIZE_EPS {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    2.0 - 2.0 * dot / (na * nb)
}

/// Reconstruction loss of the `featmask1` variant for one batch of rays.
///
/// `latents` are per-token fine latents `[rays·points·views, D_z]`, `original`
/// the unmasked tokens (detached here). `entries[r]` lists the masked token
/// rows of ray `r`. Returns `[rays, 1]`: the mean over a ray's masked entries
/// of `‖ĥ/‖ĥ‖ − h/‖h‖‖²`, or 0 for a ray with nothing masked.
pub fn featmask1_loss(
    tape: &mut Tape,
    params: &Bound<'_>,
    latents: Var,
    original: Var,
    entries: &[Vec<usize>],
) -> Result<Var, DiffError> {
    let rays = entries.len();
    let total: usize = entries.iter().map(Vec::len).sum();
    if total == 0 {
        return Ok(tape.constant(Tensor::zeros(rays, 1)));
    }
    let rows: Vec<(usize, f64)> = entries.iter().flatten().map(|&r| (r, 1.0)).collect();
    let z = tape.gather(latents, rows.clone(), 1)?;
    let h_hat = nn::mlp2(tape, params, FEATMASK1_DECODER, z)?;
    let h_orig = tape.constant(tape.value(original).clone());
    let h = tape.gather(h_orig, rows, 1)?;
    let a = tape.normalize(h_hat);
    let b = tape.normalize(h);
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    let per_entry = tape.row_sum(d2);

    let width = entries.iter().map(Vec::len).max().unwrap_or(1);
    let mut taps = Vec::with_capacity(rays * width);
    let mut next = 0;
    for e in entries {
        let w = if e.is_empty() { 0.0 } else { 1.0 / e.len() as f64 };
        for k in 0..width {
            taps.push(if k < e.len() { (next + k, w) } else { (0, 0.0) });
        }
        next += e.len();
    }
    tape.gather(per_entry, taps, width)
}

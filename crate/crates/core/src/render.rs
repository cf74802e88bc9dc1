//! Emission-absorption compositing and the pixel losses.
//!
//! `T_i = exp(−Σ_{k<i} σ_k δ_k)`, `w_i = T_i (1 − exp(−σ_i δ_i))`,
//! `C = Σ w_i c_i + T_{N+1}·background`.

use alloc::vec::Vec;
use core::fmt;

use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub enum RenderError {
    LengthMismatch,
    Negative,
}

impl fmt::Display for RenderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RenderError::LengthMismatch => write!(f, "sigma, delta and color lengths differ"),
            RenderError::Negative => write!(f, "densities and intervals must be non-negative"),
        }
    }
}

impl core::error::Error for RenderError {}

/// `(T_1..T_N, T_{N+1})`.
pub fn transmittance(sigmas: &[f64], deltas: &[f64]) -> Result<(Vec<f64>, f64), RenderError> {
    if sigmas.len() != deltas.len() {
        return Err(RenderError::LengthMismatch);
    }
    if sigmas.iter().chain(deltas).any(|&v| !(v >= 0.0)) {
        return Err(RenderError::Negative);
    }
    let mut acc = 0.0;
    let mut t = Vec::with_capacity(sigmas.len());
    for (s, d) in sigmas.iter().zip(deltas) {
        t.push(math::exp(-acc));
        acc += s * d;
    }
    Ok((t, math::exp(-acc)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    pub residual: f64,
}

pub fn composite(sigmas: &[f64], colors: &[[f64; 3]], deltas: &[f64], background: [f64; 3]) -> Result<Composite, RenderError> {
    if colors.len() != sigmas.len() {
        return Err(RenderError::LengthMismatch);
    }
    let (t, residual) = transmittance(sigmas, deltas)?;
    let weights: Vec<f64> = t.iter().zip(sigmas.iter().zip(deltas)).map(|(ti, (s, d))| ti * -math::exp_m1(-s * d)).collect();
    let mut rgb = [0.0; 3];
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
    }
    for k in 0..3 {
        rgb[k] += residual * background[k];
    }
    Ok(Composite { rgb, weights, residual })
}

/// Differentiable compositing of a ray batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchComposite {
    /// `[rays, 3]`.
    pub rgb: Var,
    /// `[rays·points, 1]`.
    pub weights: Var,
    /// `[rays, 1]`.
    pub residual: Var,
}

/// `sigma: [R·N, 1]`, `rgb: [R·N, 3]`, `deltas: R·N` values, ray-major.
pub fn composite_batch(
    tape: &mut Tape,
    sigma: Var,
    rgb: Var,
    deltas: &[f64],
    points_per_ray: usize,
    background: [f64; 3],
) -> Result<BatchComposite, DiffError> {
    let rows = tape.value(sigma).rows();
    if deltas.len() != rows || tape.value(rgb).rows() != rows {
        return Err(DiffError::InvalidArgument { op: "composite_batch", reason: "sigma, rgb and deltas must share the row count" });
    }
    let d = tape.constant(Tensor::column(deltas));
    let tau = tape.mul(sigma, d)?;
    let before = tape.exclusive_cumsum(tau, points_per_ray)?;
    let neg = tape.scale(before, -1.0);
    let t = tape.exp(neg);
    let neg_tau = tape.scale(tau, -1.0);
    let e = tape.exp(neg_tau);
    let neg_e = tape.scale(e, -1.0);
    let alpha = tape.offset(neg_e, 1.0);
    let weights = tape.mul(t, alpha)?;
    let wb = tape.broadcast(weights, rows, 3)?;
    let wc = tape.mul(wb, rgb)?;
    let color = tape.group_sum(wc, points_per_ray)?;
    let total = tape.group_sum(tau, points_per_ray)?;
    let neg_total = tape.scale(total, -1.0);
    let residual = tape.exp(neg_total);
    let rays = rows / points_per_ray;
    let rb = tape.broadcast(residual, rays, 3)?;
    let bg = tape.constant(Tensor::row(&background));
    let bg = tape.broadcast(bg, rays, 3)?;
    let back = tape.mul(rb, bg)?;
    let rgb_out = tape.add(color, back)?;
    Ok(BatchComposite { rgb: rgb_out, weights, residual })
}

/// `‖C* − C^c‖² + ‖C* − C^f‖²` per ray, `[rays, 1]`, returned with its two terms.
pub fn nerf_loss(tape: &mut Tape, coarse: Var, fine: Var, target: Var) -> Result<(Var, Var, Var), DiffError> {
    let lc = sq_err(tape, coarse, target)?;
    let lf = sq_err(tape, fine, target)?;
    Ok((tape.add(lc, lf)?, lc, lf))
}

fn sq_err(tape: &mut Tape, a: Var, b: Var) -> Result<Var, DiffError> {
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    Ok(tape.row_sum(d2))
}

/// `Σ_r (L_nerf(r) + λ·L_mrvm(r)) / normalizer`.
pub fn total_loss(tape: &mut Tape, nerf: Var, mrvm: Option<Var>, lambda: f64, normalizer: usize) -> Result<Var, DiffError> {
    let per_ray = match mrvm {
        Some(m) if lambda != 0.0 => {
            let m = tape.scale(m, lambda);
            tape.add(nerf, m)?
        }
        _ => nerf,
    };
    let s = tape.sum(per_ray);
    Ok(tape.scale(s, 1.0 / normalizer.max(1) as f64))
}

/// Plain-value loss helpers.
pub fn nerf_loss_value(coarse: [f64; 3], fine: [f64; 3], target: [f64; 3]) -> f64 {
    (0..3).map(|k| math::powi(target[k] - coarse[k], 2) + math::powi(target[k] - fine[k], 2)).sum()
}

pub fn total_loss_value(nerf: &[f64], mrvm: &[f64], lambda: f64) -> f64 {
    nerf.iter().zip(mrvm).map(|(n, m)| n + lambda * m).sum::<f64>() / nerf.len().max(1) as f64
}

//! Two-level random masking of fine-branch tokens: a fixed fraction of the
//! points on a ray, then a random non-empty subset of views per point.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::Rng;

use crate::diff::{DiffError, Tape, Var};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub enum MaskError {
    InvalidRatio(f64),
    NoViews,
}

impl fmt::Display for MaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskError::InvalidRatio(r) => write!(f, "mask ratio {r} outside [0, 1]"),
            MaskError::NoViews => write!(f, "at least one view is required"),
        }
    }
}

impl core::error::Error for MaskError {}

/// Masked (point, view) entries of one ray. Views within a point are sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked_views: BTreeMap<usize, Vec<usize>>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.masked_views.is_empty()
    }

    pub fn masked_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked_views.keys().copied()
    }

    pub fn point_count(&self) -> usize {
        self.masked_views.len()
    }

    pub fn entry_count(&self) -> usize {
        self.masked_views.values().map(Vec::len).sum()
    }

    /// Token rows (point-major, `views` per point) covered by the plan,
    /// shifted by `offset`.
    pub fn token_rows(&self, views: usize, offset: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.entry_count());
        for (&p, vs) in &self.masked_views {
            rows.extend(vs.iter().map(|&v| offset + p * views + v));
        }
        rows
    }
}

/// Number of masked points for `n_points` at ratio `eta`.
pub fn masked_point_count(n_points: usize, eta: f64) -> usize {
    (math::round(eta * n_points as f64) as usize).min(n_points)
}

/// `round(η·n_points)` points without replacement; each gets `k ~ U{1..views}`
/// and then a uniform `k`-subset of views.
pub fn sample_mask_plan<R: Rng>(n_points: usize, views: usize, eta: f64, rng: &mut R) -> Result<MaskPlan, MaskError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(MaskError::InvalidRatio(eta));
    }
    if views == 0 {
        return Err(MaskError::NoViews);
    }
    let count = masked_point_count(n_points, eta);
    let mut plan = MaskPlan::default();
    if count == 0 {
        return Ok(plan);
    }
    let mut points = index::sample(rng, n_points, count).into_vec();
    points.sort_unstable();
    for p in points {
        let k = rng.random_range(1..=views);
        let mut vs = index::sample(rng, views, k).into_vec();
        vs.sort_unstable();
        plan.masked_views.insert(p, vs);
    }
    Ok(plan)
}

/// Replaces the planned token rows with the shared `mask_token` (`1×d`).
pub fn apply_mask(tape: &mut Tape, tokens: Var, rows: &[usize], mask_token: Var) -> Result<Var, DiffError> {
    if rows.is_empty() {
        return Ok(tokens);
    }
    tape.replace_rows(tokens, mask_token, rows)
}

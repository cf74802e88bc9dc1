//! Hierarchical depth sampling along a ray.
//!
//! The coarse set is stratified over `[t_near, t_far]`; the fine set is the
//! coarse set plus extra depths drawn by inverse-CDF sampling of the coarse
//! compositing weights. Coarse entries survive the merge bit-for-bit and keep
//! their flag, which is what lets the alignment loss pair coarse and fine
//! latents of the same point.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

/// Added to every coarse weight before normalizing the sampling PDF.
pub const WEIGHT_FLOOR: f64 = 1e-5;
/// Shift applied to an extra depth that collides with an existing one.
pub const DUPLICATE_NUDGE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum SamplerError {
    ZeroSamples,
    InvalidRange,
    WeightMismatch { expected: usize, got: usize },
    NegativeWeight,
    OutOfRange(f64),
}

impl fmt::Display for SamplerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerError::ZeroSamples => write!(f, "sample count must be at least 1"),
            SamplerError::InvalidRange => write!(f, "depth range must satisfy 0 <= t_near < t_far"),
            SamplerError::WeightMismatch { expected, got } => {
                write!(f, "expected {expected} coarse weights, got {got}")
            }
            SamplerError::NegativeWeight => write!(f, "sampling weights must be non-negative"),
            SamplerError::OutOfRange(t) => write!(f, "depth {t} outside the ray range"),
        }
    }
}

impl core::error::Error for SamplerError {}

/// Sorted sample depths on one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSamples {
    pub t: Vec<f64>,
    pub is_coarse: Vec<bool>,
    pub t_near: f64,
    pub t_far: f64,
}

impl DepthSamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `δ_k = t_{k+1} − t_k`, with the last interval closed at `t_far`.
    pub fn deltas(&self) -> Vec<f64> {
        let n = self.t.len();
        (0..n).map(|k| if k + 1 < n { self.t[k + 1] - self.t[k] } else { self.t_far - self.t[k] }).collect()
    }

    /// Positions of the coarse entries, in depth order.
    pub fn coarse_indices(&self) -> Vec<usize> {
        self.is_coarse.iter().enumerate().filter_map(|(i, &c)| c.then_some(i)).collect()
    }

    pub fn coarse_count(&self) -> usize {
        self.is_coarse.iter().filter(|&&c| c).count()
    }

    /// Bin edges implied by the samples: the range ends and the midpoints
    /// between neighbours. For unjittered stratified samples these are
    /// exactly the stratification bins.
    pub fn bin_edges(&self) -> Vec<f64> {
        let mut edges = Vec::with_capacity(self.t.len() + 1);
        edges.push(self.t_near);
        for w in self.t.windows(2) {
            edges.push(0.5 * (w[0] + w[1]));
        }
        edges.push(self.t_far);
        edges
    }
}

/// One sample per equal-width bin: the midpoint, or a uniform draw inside the
/// bin when `jitter` is set. All entries are flagged coarse.
pub fn stratified<R: Rng>(t_near: f64, t_far: f64, n: usize, rng: &mut R, jitter: bool) -> Result<DepthSamples, SamplerError> {
    if n == 0 {
        return Err(SamplerError::ZeroSamples);
    }
    if !(t_near >= 0.0 && t_far > t_near && t_far.is_finite()) {
        return Err(SamplerError::InvalidRange);
    }
    let width = (t_far - t_near) / n as f64;
    let t = (0..n)
        .map(|i| {
            let u: f64 = if jitter { rng.random() } else { 0.5 };
            t_near + (i as f64 + u) * width
        })
        .collect();
    Ok(DepthSamples { t, is_coarse: alloc::vec![true; n], t_near, t_far })
}

/// `n_extra` depths drawn from the piecewise-constant PDF over the coarse
/// bins, proportional to `weights + WEIGHT_FLOOR`. One uniform per draw.
pub fn importance<R: Rng>(
    coarse: &DepthSamples,
    weights: &[f64],
    n_extra: usize,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    if weights.len() != coarse.len() {
        return Err(SamplerError::WeightMismatch { expected: coarse.len(), got: weights.len() });
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(SamplerError::NegativeWeight);
    }
    let edges = coarse.bin_edges();
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &w in weights {
        acc += w + WEIGHT_FLOOR;
        cdf.push(acc);
    }
    for c in cdf.iter_mut() {
        *c /= acc;
    }
    let last = weights.len() - 1;
    Ok((0..n_extra)
        .map(|_| {
            let u: f64 = rng.random();
            // first bin whose upper CDF value exceeds u
            let bin = cdf[1..].partition_point(|&c| c <= u).min(last);
            let (c0, c1) = (cdf[bin], cdf[bin + 1]);
            let frac = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
            edges[bin] + frac * (edges[bin + 1] - edges[bin])
        })
        .collect())
}

/// Sorted union of the coarse samples and `extra`. Coarse depths are kept
/// exactly; colliding extra depths are nudged by [`DUPLICATE_NUDGE`].
pub fn merge(coarse: &DepthSamples, extra: &[f64]) -> Result<DepthSamples, SamplerError> {
    if let Some(&bad) = extra.iter().find(|&&t| !(t >= coarse.t_near && t <= coarse.t_far)) {
        return Err(SamplerError::OutOfRange(bad));
    }
    let mut entries: Vec<(f64, bool)> = coarse.t.iter().zip(&coarse.is_coarse).map(|(&t, &c)| (t, c)).collect();
    let mut sorted_extra = extra.to_vec();
    sorted_extra.sort_by(|a, b| a.total_cmp(b));
    for mut t in sorted_extra {
        while entries.iter().any(|&(u, _)| u == t) {
            t = if t + DUPLICATE_NUDGE <= coarse.t_far { t + DUPLICATE_NUDGE } else { t - DUPLICATE_NUDGE };
        }
        entries.push((t, false));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(DepthSamples {
        t: entries.iter().map(|e| e.0).collect(),
        is_coarse: entries.iter().map(|e| e.1).collect(),
        t_near: coarse.t_near,
        t_far: coarse.t_far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn unjittered_midpoints() {
        let s = stratified(0.0, 1.0, 2, &mut substream(0, &[]), false).unwrap();
        assert_eq!(s.t, [0.25, 0.75]);
    }

    #[test]
    fn default_coarse_count() {
        let s = stratified(0.5, 2.5, 64, &mut substream(0, &[]), true).unwrap();
        assert_eq!(s.len(), 64);
        assert_eq!(s.coarse_count(), 64);
    }

    #[test]
    fn zero_samples_rejected() {
        assert_eq!(stratified(0.5, 1.0, 0, &mut substream(0, &[]), false), Err(SamplerError::ZeroSamples));
    }

    #[test]
    fn delta_weights_stay_in_bin() {
        let coarse = stratified(1.0, 3.0, 64, &mut substream(1, &[]), false).unwrap();
        let mut w = alloc::vec![0.0; 64];
        w[17] = 1e9;
        let extra = importance(&coarse, &w, 1000, &mut substream(2, &[])).unwrap();
        let edges = coarse.bin_edges();
        assert!(extra.iter().all(|&t| t >= edges[17] && t <= edges[18]));
    }

    /// Quantile of the limiting Kolmogorov distribution by bisection on its series.
    fn kolmogorov_quantile(p: f64) -> f64 {
        let cdf = |x: f64| {
            1.0 - 2.0 * (1..100).map(|k| {
                let k = k as f64;
                let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * x * x).exp()
            }).sum::<f64>()
        };
        let (mut lo, mut hi) = (0.3, 3.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p { lo = mid } else { hi = mid }
        }
        lo
    }

    #[test]
    fn uniform_weights_give_uniform_depths() {
        let (a, b) = (1.0, 3.0);
        let coarse = stratified(a, b, 64, &mut substream(5, &[]), false).unwrap();
        let n = 100_000;
        let mut extra = importance(&coarse, &[0.25; 64], n, &mut substream(6, &[])).unwrap();
        extra.sort_by(|x, y| x.total_cmp(y));
        let mut d = 0.0f64;
        for (i, &t) in extra.iter().enumerate() {
            let f = (t - a) / (b - a);
            d = d.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        let critical = kolmogorov_quantile(0.99) / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn merge_default_counts_and_identity() {
        let mut rng = substream(4, &[]);
        let coarse = stratified(2.0, 4.0, 64, &mut rng, true).unwrap();
        let w: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        let extra = importance(&coarse, &w, 32, &mut rng).unwrap();
        let fine = merge(&coarse, &extra).unwrap();
        assert_eq!(fine.len(), 96);
        assert_eq!(fine.coarse_count(), 64);
        let kept: Vec<f64> = fine.coarse_indices().iter().map(|&i| fine.t[i]).collect();
        assert_eq!(kept, coarse.t);
        assert!(fine.t.windows(2).all(|w| w[0] < w[1]));

        assert_eq!(merge(&coarse, &[]).unwrap(), coarse);
    }

    #[test]
    fn duplicate_depth_nudged() {
        let coarse = stratified(1.0, 2.0, 4, &mut substream(0, &[]), false).unwrap();
        let fine = merge(&coarse, &[coarse.t[1], coarse.t[1]]).unwrap();
        assert_eq!(fine.len(), 6);
        assert!(fine.t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(fine.coarse_count(), 4);
    }

    proptest! {
        #[test]
        fn jittered_samples_sorted_and_binned(seed in 0u64..1000, n in 1usize..100) {
            let (a, b) = (0.7, 3.1);
            let s = stratified(a, b, n, &mut substream(seed, &[]), true).unwrap();
            let w = (b - a) / n as f64;
            for (i, &t) in s.t.iter().enumerate() {
                prop_assert!(t >= a + i as f64 * w && t <= a + (i + 1) as f64 * w);
            }
            prop_assert!(s.t.windows(2).all(|p| p[0] < p[1]));
            let total: f64 = s.deltas().iter().sum();
            prop_assert!((total - (b - s.t[0])).abs() < 1e-12);
        }

        #[test]
        fn merge_preserves_coarse_multiset(seed in 0u64..500) {
            let mut rng = substream(seed, &[]);
            let coarse = stratified(0.3, 1.9, 16, &mut rng, true).unwrap();
            let w: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let extra = importance(&coarse, &w, 8, &mut rng).unwrap();
            let fine = merge(&coarse, &extra).unwrap();
            let kept: Vec<f64> = fine.coarse_indices().iter().map(|&i| fine.t[i]).collect();
            prop_assert_eq!(kept, coarse.t.clone());
            prop_assert!(fine.t.iter().all(|&t| (0.3..=1.9).contains(&t)));
            let total: f64 = fine.deltas().iter().sum();
            prop_assert!((total - (1.9 - fine.t[0])).abs() < 1e-12);
        }
    }
}

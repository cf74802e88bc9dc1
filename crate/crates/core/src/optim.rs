//! Adam with global-norm gradient clipping.

use alloc::vec::Vec;

use crate::diff::{DiffError, ParamStore, Tensor};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update. `grads` must match `params` in order and shape.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), DiffError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(DiffError::InvalidArgument { op: "adam", reason: "gradient list does not match parameters" });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - math::powi(beta1, self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - math::powi(beta2, self.step.min(i32::MAX as u64) as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.shape() {
                return Err(DiffError::ShapeMismatch { op: "adam", left: p.shape(), right: g.shape() });
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                *x -= lr * (m[k] / c1) / (math::sqrt(v[k] / c2) + eps);
            }
        }
        Ok(())
    }

    /// Drops the moments of parameters removed from the store, keeping the
    /// rest aligned. `keep[i]` says whether entry `i` survives.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m.retain(|_| *it.next().unwrap_or(&false));
        let mut it = keep.iter();
        self.v.retain(|_| *it.next().unwrap_or(&false));
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    math::sqrt(grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum())
}

/// Rescales `grads` to norm `max_norm` when above it. Returns the norm before
/// clipping and whether clipping fired.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> (f64, bool) {
    let n = global_norm(grads);
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
        return (n, true);
    }
    (n, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new(0);
        p.insert("x", Tensor::row(&[1.0, -1.0])).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &p);
        opt.update(&mut p, &[Tensor::row(&[3.0, -0.5])]).unwrap();
        let x = p.get("x").unwrap().data();
        assert!((x[0] - 0.9).abs() < 1e-7 && (x[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamStore::new(0);
        p.insert("x", Tensor::row(&[2.0, -3.0])).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &p);
        for _ in 0..2000 {
            let g = p.get("x").unwrap().map(|v| 2.0 * v);
            opt.update(&mut p, &[g]).unwrap();
        }
        assert!(p.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn clipping_rescales_to_bound() {
        let mut g = vec![Tensor::row(&[30.0, 40.0])];
        let (n, fired) = clip_global_norm(&mut g, 10.0);
        assert_eq!(n, 50.0);
        assert!(fired);
        assert!((global_norm(&g) - 10.0).abs() < 1e-12);
        let (_, fired) = clip_global_norm(&mut g, 10.0 + 1e-9);
        assert!(!fired);
    }
}

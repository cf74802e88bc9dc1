//! PSNR and SSIM between RGB images in `[0,1]`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::image::Image;
use crate::math;

/// Reported instead of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricError {
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    TooSmall { width: usize, height: usize },
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::ShapeMismatch { left, right } => {
                write!(f, "image sizes differ: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)
            }
            MetricError::TooSmall { width, height } => {
                write!(f, "image {width}x{height} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
            }
        }
    }
}

impl core::error::Error for MetricError {}

fn check(a: &Image, b: &Image) -> Result<(), MetricError> {
    let (sa, sb) = ((a.width(), a.height()), (b.width(), b.height()));
    if sa != sb {
        return Err(MetricError::ShapeMismatch { left: sa, right: sb });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `−10·log10(MSE)`; `+∞` when the images are identical.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * math::log10(m) })
}

/// PSNR with the infinite case replaced by [`PSNR_CAP`].
pub fn psnr_capped(a: &Image, b: &Image) -> Result<f64, MetricError> {
    psnr(a, b).map(|p| p.min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| math::exp(-(i as f64 - r) * (i as f64 - r) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained 11×11 windows of the channel-mean
/// grayscale images (Gaussian σ=1.5, K1=0.01, K2=0.03, range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall { width: w, height: h });
    }
    let (x, y) = (a.to_gray(), b.to_gray());
    let g = gaussian_window();
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);

    // separable filtering: horizontal pass then vertical pass on five moment images
    let fields: [Vec<f64>; 5] = [
        x.clone(),
        y.clone(),
        x.iter().map(|v| v * v).collect(),
        y.iter().map(|v| v * v).collect(),
        x.iter().zip(&y).map(|(p, q)| p * q).collect(),
    ];
    let mut filtered: Vec<Vec<f64>> = Vec::with_capacity(5);
    for f in &fields {
        let mut horiz = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                horiz[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * f[r * w + c + k]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * horiz[(r + k) * ow + c]).sum();
            }
        }
        filtered.push(out);
    }
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (mx, my) = (filtered[0][i], filtered[1][i]);
        let vx = filtered[2][i] - mx * mx;
        let vy = filtered[3][i] - my * my;
        let cxy = filtered[4][i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / (oh * ow) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn checker(n: usize) -> Image {
        let mut img = Image::new(n, n);
        for y in 0..n {
            for x in 0..n {
                let v = if (x / 2 + y / 2) % 2 == 0 { 0.9 } else { 0.1 };
                img.set_pixel(x, y, [v; 3]);
            }
        }
        img
    }

    #[test]
    fn psnr_anchors() {
        let a = Image::filled(4, 4, [0.2; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr_capped(&a, &a).unwrap(), 99.0);
        let b = Image::filled(4, 4, [0.3; 3]);
        // MSE = 0.01
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let z = Image::filled(4, 4, [0.0; 3]);
        let o = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert!(psnr(&z, &Image::new(3, 4)).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let base = checker(16);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let mut rng = substream(3, &[]);
            let noisy = Image::from_vec(16, 16, base.data().iter().map(|v| v + amp * (rng.random::<f64>() * 2.0 - 1.0)).collect());
            let p = psnr(&base, &noisy).unwrap();
            assert!(p < last);
            assert_eq!(p, psnr(&noisy, &base).unwrap());
            last = p;
        }
    }

    #[test]
    fn ssim_identity_negative_and_constants() {
        let c = checker(16);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        let neg = Image::from_vec(16, 16, c.data().iter().map(|v| 1.0 - v).collect());
        assert!(ssim(&c, &neg).unwrap() < 0.0);
        assert_eq!(ssim(&c, &neg).unwrap(), ssim(&neg, &c).unwrap());
        let a = Image::filled(12, 12, [0.2; 3]);
        let b = Image::filled(12, 12, [0.7; 3]);
        let s = ssim(&a, &b).unwrap();
        // zero variances: structure term is exactly 1, luminance term below 1
        let lum = (2.0 * 0.2 * 0.7 + 1e-4) / (0.04 + 0.49 + 1e-4);
        assert!((s - lum).abs() < 1e-12 && s < 1.0);
        assert!(ssim(&Image::new(10, 10), &Image::new(10, 10)).is_err());
    }
}

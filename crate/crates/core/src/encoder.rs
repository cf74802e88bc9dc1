//! Reference-view feature extraction and per-point token construction.
//!
//! Views are stacked row-wise (`S·H·W × C`) so one pass of two 3×3
//! convolutions encodes all of them. Tokens are laid out point-major: row
//! `i·S + j` is point `i` seen from view `j`.

use alloc::vec::Vec;
use rand::Rng;

use crate::diff::{Bound, DiffError, ParamStore, Tape, Tensor, Var};
use crate::geometry::{bilinear_taps, project_point, Camera, Vec3};
use crate::math;
use crate::nn;

pub const MASK_TOKEN: &str = "mask_token";
/// Octaves of the optional depth encoding; each contributes a sin and a cos.
pub const DEPTH_OCTAVES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub token_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { feature_dim: 16, token_dim: 32 }
    }
}

/// Registers the convolution, merge and mask-token parameters.
pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &EncoderConfig) -> Result<(), DiffError> {
    nn::init_linear(store, rng, "enc.conv1", 9 * 3, cfg.feature_dim)?;
    nn::init_linear(store, rng, "enc.conv2", 9 * cfg.feature_dim, cfg.feature_dim)?;
    nn::init_linear(store, rng, "enc.merge", cfg.feature_dim + 3, cfg.token_dim)?;
    let scale = 1.0 / math::sqrt(cfg.token_dim as f64);
    let m: Vec<f64> = (0..cfg.token_dim).map(|_| rng.random_range(-scale..scale)).collect();
    store.insert(MASK_TOKEN, Tensor::from_vec(1, cfg.token_dim, m))
}

/// Feature maps for a stack of images (`n·H·W × 3`, values in `[0,1]`).
/// Returns `n·H·W × feature_dim`.
pub fn encode_views(tape: &mut Tape, params: &Bound<'_>, images: Var, height: usize, width: usize) -> Result<Var, DiffError> {
    if tape.value(images).cols() != 3 {
        return Err(DiffError::InvalidArgument { op: "encode_views", reason: "images must have 3 channels" });
    }
    let p1 = tape.im2col3x3(images, height, width)?;
    let f1 = nn::linear(tape, params, "enc.conv1", p1)?;
    let f1 = tape.relu(f1);
    let p2 = tape.im2col3x3(f1, height, width)?;
    nn::linear(tape, params, "enc.conv2", p2)
}

/// Reference views for one target: cameras plus their stacked images and
/// feature maps (both on the tape).
#[derive(Clone, Copy, Debug)]
pub struct ViewStack<'a> {
    pub cameras: &'a [Camera],
    pub height: usize,
    pub width: usize,
    pub images: Var,
    pub features: Var,
}

impl ViewStack<'_> {
    pub fn count(&self) -> usize {
        self.cameras.len()
    }
}

/// Tokens for a list of points, point-major. `valid[i·S + j]` is false when
/// point `i` lies behind camera `j`; those rows hold the mask token.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub h: Var,
    pub valid: Vec<bool>,
    pub views: usize,
}

impl TokenBatch {
    pub fn points(&self) -> usize {
        self.valid.len() / self.views.max(1)
    }

    /// Rows of tokens that fell outside a reference camera.
    pub fn invalid_rows(&self) -> Vec<usize> {
        self.valid.iter().enumerate().filter_map(|(i, &v)| (!v).then_some(i)).collect()
    }
}

/// Bilinear taps into the stacked `S·H·W` grid, one block of four per token.
/// Invalid tokens get four zero-weight taps.
pub fn token_taps(views: &ViewStack<'_>, points: &[Vec3]) -> (Vec<(usize, f64)>, Vec<bool>) {
    let plane = views.height * views.width;
    let mut taps = Vec::with_capacity(points.len() * views.count() * 4);
    let mut valid = Vec::with_capacity(points.len() * views.count());
    for &p in points {
        for (j, cam) in views.cameras.iter().enumerate() {
            match project_point(cam, p) {
                Some(ip) => {
                    for (r, w) in bilinear_taps(views.height, views.width, ip.px, ip.py) {
                        taps.push((j * plane + r, w));
                    }
                    valid.push(true);
                }
                None => {
                    taps.extend([(j * plane, 0.0); 4]);
                    valid.push(false);
                }
            }
        }
    }
    (taps, valid)
}

/// `h = W·[f, c] + b` for every (point, view) pair, with out-of-view pairs
/// replaced by the mask token.
pub fn gather_tokens(tape: &mut Tape, params: &Bound<'_>, views: &ViewStack<'_>, points: &[Vec3]) -> Result<TokenBatch, DiffError> {
    if views.count() == 0 {
        return Err(DiffError::InvalidArgument { op: "gather_tokens", reason: "no reference views" });
    }
    let (taps, valid) = token_taps(views, points);
    let f = tape.gather(views.features, taps.clone(), 4)?;
    let c = tape.gather(views.images, taps, 4)?;
    let fc = tape.concat(&[f, c])?;
    let h = nn::linear(tape, params, "enc.merge", fc)?;
    let batch = TokenBatch { h, valid, views: views.count() };
    let invalid = batch.invalid_rows();
    let h = if invalid.is_empty() {
        h
    } else {
        let m = params.var(MASK_TOKEN)?;
        tape.replace_rows(h, m, &invalid)?
    };
    Ok(TokenBatch { h, ..batch })
}

/// Sin/cos encoding of normalized depth `u ∈ [0,1]`, `2·DEPTH_OCTAVES` columns
/// per point, repeated for each of `views` tokens of the point.
pub fn depth_encoding(depths01: &[f64], views: usize) -> Tensor {
    let d = 2 * DEPTH_OCTAVES;
    let mut out = Tensor::zeros(depths01.len() * views, d);
    for (i, &u) in depths01.iter().enumerate() {
        for j in 0..views {
            let row = out.row_slice_mut(i * views + j);
            for k in 0..DEPTH_OCTAVES {
                let a = math::powi(2.0, k as i32) * core::f64::consts::PI * u;
                row[2 * k] = math::sin(a);
                row[2 * k + 1] = math::cos(a);
            }
        }
    }
    out
}

/// Appends a constant depth encoding to every token.
pub fn with_depth_encoding(tape: &mut Tape, tokens: Var, depths01: &[f64], views: usize) -> Result<Var, DiffError> {
    let enc = tape.constant(depth_encoding(depths01, views));
    tape.concat(&[tokens, enc])
}

/// Parameter name prefixes owned by the encoder.
pub fn param_prefixes() -> [&'static str; 2] {
    ["enc.", MASK_TOKEN]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_check;
    use crate::geometry::{look_at, ray_for_pixel};
    use crate::image::Image;
    use crate::rng::substream;
    use std::vec;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(3);
        init(&mut s, &mut substream(3, &[]), &EncoderConfig::default()).unwrap();
        s
    }

    fn camera(eye: Vec3) -> Camera {
        Camera::with_fov(0.8, 8, 8, look_at(eye, [0.0; 3], [0.0, 0.0, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn constant_image_gives_constant_interior_features() {
        let s = store();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let img = tape.constant(Image::filled(8, 8, [0.3, 0.6, 0.9]).to_tensor());
        let f = encode_views(&mut tape, &b, img, 8, 8).unwrap();
        let t = tape.value(f);
        assert_eq!(t.shape(), (64, 16));
        let reference = t.row_slice(2 * 8 + 2).to_vec();
        for y in 2..6 {
            for x in 2..6 {
                for (a, r) in t.row_slice(y * 8 + x).iter().zip(&reference) {
                    assert!((a - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut s = ParamStore::new(0);
        init(&mut s, &mut substream(11, &[]), &EncoderConfig { feature_dim: 3, token_dim: 4 }).unwrap();
        let mut rng = substream(12, &[]);
        let pixels: Vec<f64> = (0..5 * 4 * 3).map(|_| rng.random::<f64>()).collect();
        let img = Tensor::from_vec(20, 3, pixels);
        let weights: Vec<f64> = (0..20 * 3).map(|_| rng.random::<f64>() - 0.5).collect();
        let w = Tensor::from_vec(20, 3, weights);
        let report = finite_diff_check(
            |tape, b| {
                let x = tape.constant(img.clone());
                let f = encode_views(tape, b, x, 5, 4)?;
                let w = tape.constant(w.clone());
                let prod = tape.mul(f, w)?;
                let sq = tape.mul(prod, prod)?;
                Ok(tape.sum(sq))
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn behind_camera_point_gets_mask_token() {
        let s = store();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let cams = [camera([0.0, -3.0, 0.0])];
        let img = tape.constant(Image::filled(8, 8, [0.5; 3]).to_tensor());
        let f = encode_views(&mut tape, &b, img, 8, 8).unwrap();
        let stack = ViewStack { cameras: &cams, height: 8, width: 8, images: img, features: f };
        let tokens = gather_tokens(&mut tape, &b, &stack, &[[0.0, -5.0, 0.0]]).unwrap();
        assert_eq!(tokens.valid, vec![false]);
        assert_eq!(tape.value(tokens.h).data(), s.get(MASK_TOKEN).unwrap().data());
    }

    #[test]
    fn pixel_center_of_constant_image_returns_its_color() {
        let cam = camera([0.0, -3.0, 0.0]);
        let ray = ray_for_pixel(&cam, 2.0, 5.0).unwrap();
        let p = ray.at(2.5);
        let ip = project_point(&cam, p).unwrap();
        assert!((ip.px - 2.5).abs() < 1e-9 && (ip.py - 5.5).abs() < 1e-9);
        let grid = Image::filled(8, 8, [0.2, 0.4, 0.8]).to_tensor();
        let rgb = crate::geometry::bilinear_sample(&grid, 8, 8, ip.px, ip.py);
        for (a, b) in rgb.iter().zip([0.2, 0.4, 0.8]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tokens_are_point_major_over_views() {
        let s = store();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let cams = [camera([0.0, -3.0, 0.0]), camera([3.0, 0.0, 0.0]), camera([0.0, 3.0, 0.5])];
        let mut stack_px = Vec::new();
        for _ in 0..3 {
            stack_px.extend_from_slice(Image::filled(8, 8, [0.5; 3]).to_tensor().data());
        }
        let img = tape.constant(Tensor::from_vec(192, 3, stack_px));
        let f = encode_views(&mut tape, &b, img, 8, 8).unwrap();
        let stack = ViewStack { cameras: &cams, height: 8, width: 8, images: img, features: f };
        let tokens = gather_tokens(&mut tape, &b, &stack, &[[0.1, 0.0, 0.0], [0.0, 0.1, 0.1]]).unwrap();
        assert_eq!(tokens.points(), 2);
        assert_eq!(tape.value(tokens.h).shape(), (6, 32));
        assert!(tokens.valid.iter().all(|&v| v));
    }

    #[test]
    fn far_pixel_perturbation_leaves_tokens_unchanged() {
        let s = store();
        let cams = [camera([0.0, -3.0, 0.0])];
        let run = |img: Image| {
            let mut tape = Tape::new();
            let b = s.bind(&mut tape);
            let x = tape.constant(img.to_tensor());
            let f = encode_views(&mut tape, &b, x, 8, 8).unwrap();
            let stack = ViewStack { cameras: &cams, height: 8, width: 8, images: x, features: f };
            let t = gather_tokens(&mut tape, &b, &stack, &[[0.0, 0.0, 0.0]]).unwrap();
            tape.value(t.h).clone()
        };
        let base = Image::filled(8, 8, [0.5; 3]);
        let mut moved = base.clone();
        moved.set_pixel(0, 0, [0.0, 1.0, 0.0]);
        // the center projects near pixel (4,4); two conv layers reach 2 pixels
        assert_eq!(run(base), run(moved));
    }

    #[test]
    fn depth_encoding_shape() {
        let t = depth_encoding(&[0.0, 0.5], 3);
        assert_eq!(t.shape(), (6, 8));
        assert_eq!(t.row_slice(0)[1], 1.0);
    }
}

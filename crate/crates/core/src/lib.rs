//! Numerical core for masked ray and view modeling on a generalizable
//! radiance field.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or the clock lives in the companion `mrvm` crate; this one holds
//! the differentiable pieces and the analytic ground truth:
//!
//! - [`diff`]: reverse-mode autodiff tape over dense matrices
//! - [`geometry`]: pinhole cameras, rays, projection, bilinear lookup
//! - [`scene`]: procedural analytic scenes and their exact renderer
//! - [`encoder`], [`field`]: image features → per-view tokens → density/color
//! - [`sampler`]: stratified and inverse-CDF depth sampling
//! - [`masking`], [`mrvm`]: ray/view masking and the latent alignment objective
//! - [`render`]: volume compositing and pixel losses
//! - [`model`]: the two-branch pipeline over a batch of rays
//! - [`optim`], [`metrics`]: Adam, PSNR and SSIM
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diff;
pub mod encoder;
pub mod field;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod masking;
pub mod math;
pub mod metrics;
pub mod model;
pub mod mrvm;
pub mod nn;
pub mod optim;
pub mod render;
pub mod rng;
pub mod sampler;
pub mod scene;

pub use diff::{DiffError, ParamStore, Tape, Tensor, Var};

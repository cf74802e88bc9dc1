//! The two-branch pipeline over a chunk of rays.
//!
//! Reference-view feature maps are computed once per step. Each chunk of rays
//! then runs on its own tape with the feature maps as a leaf: coarse pass,
//! importance sampling on the detached coarse weights, optionally masked fine
//! pass, losses. Chunk gradients w.r.t. the feature maps are pulled back
//! through the encoder afterwards, so the result does not depend on how
//! chunks are scheduled.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::diff::{Bound, DiffError, ParamStore, Tape, Tensor, Var};
use crate::encoder::{self, EncoderConfig, TokenBatch, ViewStack, DEPTH_OCTAVES, MASK_TOKEN};
use crate::field::{self, Branch, FieldConfig};
use crate::geometry::{Camera, Ray, Vec3};
use crate::masking::{self, MaskError};
use crate::math;
use crate::mrvm::{self, HeadConfig, MrvmMode, FINE_TARGET};
use crate::render;
use crate::rng::{purpose, substream, StreamRng};
use crate::sampler::{self, DepthSamples, SamplerError};

/// Width of the optional view-direction encoding: raw direction plus two octaves of sin/cos.
pub const VIEW_DIR_DIM: usize = 3 + 3 * 2 * 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub n_coarse: usize,
    pub n_fine_extra: usize,
    pub depth_encoding: bool,
    pub view_dirs: bool,
    pub mode: MrvmMode,
    pub background: [f64; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 16,
            token_dim: 32,
            hidden: 64,
            latent_dim: 32,
            proj_hidden: 32,
            proj_dim: 16,
            n_coarse: 64,
            n_fine_extra: 32,
            depth_encoding: false,
            view_dirs: false,
            mode: MrvmMode::Default,
            background: [1.0; 3],
        }
    }
}

impl ModelConfig {
    pub fn n_fine(&self) -> usize {
        self.n_coarse + self.n_fine_extra
    }

    fn field(&self) -> FieldConfig {
        FieldConfig {
            input_dim: self.token_dim + if self.depth_encoding { 2 * DEPTH_OCTAVES } else { 0 },
            hidden: self.hidden,
            latent_dim: self.latent_dim,
            color_extra: if self.view_dirs { VIEW_DIR_DIM } else { 0 },
        }
    }

    fn heads(&self) -> HeadConfig {
        HeadConfig { latent_dim: self.latent_dim, hidden: self.proj_hidden, proj_dim: self.proj_dim, token_dim: self.token_dim }
    }
}

#[derive(Debug)]
pub enum ModelError {
    Diff(DiffError),
    Sampler(SamplerError),
    Mask(MaskError),
    Input(&'static str),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Diff(e) => write!(f, "{e}"),
            ModelError::Sampler(e) => write!(f, "{e}"),
            ModelError::Mask(e) => write!(f, "{e}"),
            ModelError::Input(s) => f.write_str(s),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<DiffError> for ModelError {
    fn from(e: DiffError) -> Self {
        ModelError::Diff(e)
    }
}

impl From<SamplerError> for ModelError {
    fn from(e: SamplerError) -> Self {
        ModelError::Sampler(e)
    }
}

impl From<MaskError> for ModelError {
    fn from(e: MaskError) -> Self {
        ModelError::Mask(e)
    }
}

/// Reference views for one target view.
#[derive(Clone, Debug)]
pub struct References {
    pub cameras: Vec<Camera>,
    pub height: usize,
    pub width: usize,
    /// Stacked RGB, `S·H·W × 3`.
    pub images: Tensor,
}

impl References {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }
}

/// A target ray with its depth range already set, and its ground-truth color.
#[derive(Clone, Copy, Debug)]
pub struct RayInput {
    pub ray: Ray,
    pub target: [f64; 3],
}

/// Per-chunk switches.
#[derive(Clone, Copy, Debug)]
pub struct PassOptions {
    /// Pretraining: masking and the auxiliary loss follow the model's mode.
    pub pretrain: bool,
    pub mask_ratio: f64,
    pub jitter: bool,
    pub lambda: f64,
    /// Rays in the whole batch; the chunk loss is divided by this.
    pub normalizer: usize,
}

impl PassOptions {
    pub fn finetune(normalizer: usize, jitter: bool) -> Self {
        PassOptions { pretrain: false, mask_ratio: 0.0, jitter, lambda: 0.0, normalizer }
    }

    pub fn eval() -> Self {
        PassOptions::finetune(1, false)
    }
}

/// Scalar telemetry and renders for a chunk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChunkStats {
    pub loss: f64,
    pub color_coarse: Vec<[f64; 3]>,
    pub color_fine: Vec<[f64; 3]>,
    pub nerf_coarse: Vec<f64>,
    pub nerf_fine: Vec<f64>,
    pub aux: Vec<f64>,
    /// `Σ w + T_res` per ray for the coarse and fine branches.
    pub weight_total_coarse: Vec<f64>,
    pub weight_total_fine: Vec<f64>,
    pub fine_samples: usize,
    pub masked_entries: usize,
    pub degenerate_pairs: usize,
}

/// Inputs that a finite-difference check must hold fixed: the depth samples
/// (drawn from detached weights) and, optionally, the stop-gradient target
/// (projections `z̄^c`, or the unmasked tokens for `featmask1`).
#[derive(Clone, Debug)]
pub struct Frozen {
    pub coarse: Vec<DepthSamples>,
    pub fine: Vec<DepthSamples>,
    pub target: Option<Tensor>,
}

/// Tape handles produced by a forward pass.
pub struct Forward {
    pub loss: Var,
    pub stats: ChunkStats,
    /// Stop-gradient target of the auxiliary loss, when computed.
    pub target: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Everything trained by gradient descent.
    pub params: ParamStore,
    /// EMA-only parameters (target projector, featmask2 trunk copy).
    pub ema: ParamStore,
}

const HEAD_PREFIXES: [&str; 3] = ["proj.", "pred.", "fm1."];

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        if config.n_coarse == 0 {
            return Err(ModelError::Input("n_coarse must be at least 1"));
        }
        let mut rng = substream(seed, &[purpose::INIT]);
        let mut params = ParamStore::new(seed);
        let mut ema = ParamStore::new(seed);
        encoder::init(&mut params, &mut rng, &EncoderConfig { feature_dim: config.feature_dim, token_dim: config.token_dim })?;
        let fc = config.field();
        field::init_branch(&mut params, &mut rng, Branch::Coarse, &fc)?;
        field::init_branch(&mut params, &mut rng, Branch::Fine, &fc)?;
        if config.mode.uses_projector() {
            mrvm::init_heads(&mut params, &mut ema, &mut rng, &config.heads())?;
        }
        if config.mode == MrvmMode::FeatMask1 {
            mrvm::init_featmask1(&mut params, &mut rng, &config.heads())?;
        }
        if config.mode == MrvmMode::FeatMask2 {
            mrvm::copy_prefix(&params, &mut ema, "fine.trunk", &alloc::format!("{FINE_TARGET}.trunk"))?;
        }
        Ok(Model { config, params, ema })
    }

    /// Drops projector, predictor, reconstruction decoder and all EMA state,
    /// as done before finetuning. Returns the keep-mask over the old
    /// parameter order (for realigning optimizer moments).
    pub fn strip_heads(&mut self) -> Vec<bool> {
        let keep: Vec<bool> = self.params.names().iter().map(|n| !HEAD_PREFIXES.iter().any(|p| n.starts_with(p))).collect();
        for p in HEAD_PREFIXES {
            self.params.remove_prefix(p);
        }
        self.ema = ParamStore::new(self.ema.rng_seed);
        self.config.mode = MrvmMode::Off;
        keep
    }

    pub fn has_heads(&self) -> bool {
        self.params.names().iter().any(|n| HEAD_PREFIXES.iter().any(|p| n.starts_with(p)))
    }

    /// EMA step for every target network present.
    pub fn ema_update(&mut self, tau: f64) -> Result<(), DiffError> {
        if self.ema.is_empty() {
            return Ok(());
        }
        mrvm::ema_update(&mut self.ema, &self.params, mrvm::PROJ, mrvm::PROJ_TARGET, tau)?;
        mrvm::ema_update(&mut self.ema, &self.params, "fine.trunk", &alloc::format!("{FINE_TARGET}.trunk"), tau)
    }

    /// Feature maps of the stacked reference images (no gradient).
    pub fn features(&self, refs: &References) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let b = self.params.bind_frozen(&mut tape);
        let img = tape.constant(refs.images.clone());
        let f = encoder::encode_views(&mut tape, &b, img, refs.height, refs.width)?;
        Ok(tape.value(f).clone())
    }

    /// Gradients of the chunk loss w.r.t. every parameter (store order) and
    /// w.r.t. the feature maps, plus telemetry.
    pub fn chunk_gradients(
        &self,
        refs: &References,
        features: &Tensor,
        rays: &[RayInput],
        rngs: &mut [StreamRng],
        opts: &PassOptions,
    ) -> Result<(Vec<Tensor>, Tensor, ChunkStats), ModelError> {
        let mut tape = Tape::new();
        let bp = self.params.bind(&mut tape);
        let be = self.ema.bind_frozen(&mut tape);
        let images = tape.constant(refs.images.clone());
        let feats = tape.leaf(features.clone());
        let views = ViewStack { cameras: &refs.cameras, height: refs.height, width: refs.width, images, features: feats };
        let fwd = self.forward(&mut tape, &bp, &be, &views, rays, rngs, opts, None)?;
        let mut grads = tape.backward(fwd.loss)?;
        let pg = collect(&mut grads, bp.vars(), &self.params);
        let fg = grads.take(feats).unwrap_or_else(|| Tensor::zeros(features.rows(), features.cols()));
        Ok((pg, fg, fwd.stats))
    }

    /// Pulls a feature-map gradient back through the encoder.
    pub fn encoder_gradients(&self, refs: &References, feature_grad: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        let mut tape = Tape::new();
        let bp = self.params.bind(&mut tape);
        let img = tape.constant(refs.images.clone());
        let f = encoder::encode_views(&mut tape, &bp, img, refs.height, refs.width)?;
        let g = tape.constant(feature_grad.clone());
        let surrogate = tape.dot(f, g)?;
        let mut grads = tape.backward(surrogate)?;
        Ok(collect(&mut grads, bp.vars(), &self.params))
    }

    /// Sequential reference implementation of one step's gradients over
    /// fixed-size chunks. Returns summed gradients and merged telemetry.
    pub fn batch_gradients(
        &self,
        refs: &References,
        rays: &[RayInput],
        rngs: &mut [StreamRng],
        opts: &PassOptions,
        chunk: usize,
    ) -> Result<(Vec<Tensor>, ChunkStats), ModelError> {
        let features = self.features(refs)?;
        let mut total = zeros_like(&self.params);
        let mut feat_grad = Tensor::zeros(features.rows(), features.cols());
        let mut stats = ChunkStats::default();
        for (rs, gs) in rays.chunks(chunk.max(1)).zip(rngs.chunks_mut(chunk.max(1))) {
            let (pg, fg, st) = self.chunk_gradients(refs, &features, rs, gs, opts)?;
            add_all(&mut total, &pg);
            feat_grad.add_assign(&fg);
            stats.merge(st);
        }
        let eg = self.encoder_gradients(refs, &feat_grad)?;
        add_all(&mut total, &eg);
        Ok((total, stats))
    }

    /// Whole pipeline, encoder included, on one tape. Used for gradient checks.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        params: &Bound<'_>,
        ema: &Bound<'_>,
        refs: &References,
        rays: &[RayInput],
        rngs: &mut [StreamRng],
        opts: &PassOptions,
        fixed: Option<&Frozen>,
    ) -> Result<Forward, ModelError> {
        let images = tape.constant(refs.images.clone());
        let feats = encoder::encode_views(tape, params, images, refs.height, refs.width)?;
        let views = ViewStack { cameras: &refs.cameras, height: refs.height, width: refs.width, images, features: feats };
        self.forward(tape, params, ema, &views, rays, rngs, opts, fixed)
    }

    /// Forward-only render of a set of rays (fine and coarse colors).
    pub fn render(&self, refs: &References, features: &Tensor, rays: &[RayInput], rngs: &mut [StreamRng]) -> Result<ChunkStats, ModelError> {
        let mut tape = Tape::new();
        let bp = self.params.bind_frozen(&mut tape);
        let be = self.ema.bind_frozen(&mut tape);
        let images = tape.constant(refs.images.clone());
        let feats = tape.constant(features.clone());
        let views = ViewStack { cameras: &refs.cameras, height: refs.height, width: refs.width, images, features: feats };
        Ok(self.forward(&mut tape, &bp, &be, &views, rays, rngs, &PassOptions::eval(), None)?.stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound<'_>,
        ema: &Bound<'_>,
        views: &ViewStack<'_>,
        rays: &[RayInput],
        rngs: &mut [StreamRng],
        opts: &PassOptions,
        fixed: Option<&Frozen>,
    ) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        if rays.is_empty() || rngs.len() != rays.len() {
            return Err(ModelError::Input("need one rng per ray and at least one ray"));
        }
        let s = views.count();
        let mode = if opts.pretrain { cfg.mode } else { MrvmMode::Off };

        // coarse pass
        let coarse: Vec<DepthSamples> = match fixed {
            Some(f) => f.coarse.clone(),
            None => rays
                .iter()
                .zip(rngs.iter_mut())
                .map(|(r, g)| sampler::stratified(r.ray.t_near, r.ray.t_far, cfg.n_coarse, g, opts.jitter))
                .collect::<Result<_, _>>()?,
        };
        let nc = cfg.n_coarse;
        let c_pass = self.branch_pass(tape, params, views, rays, &coarse, Branch::Coarse, None)?;

        // importance sampling on detached weights
        let fine: Vec<DepthSamples> = match fixed {
            Some(f) => f.fine.clone(),
            None => {
                let w = tape.value(c_pass.composite.weights).data().to_vec();
                let mut out = Vec::with_capacity(rays.len());
                for (r, (cs, g)) in coarse.iter().zip(rngs.iter_mut()).enumerate() {
                    let extra = sampler::importance(cs, &w[r * nc..(r + 1) * nc], cfg.n_fine_extra, g)?;
                    out.push(sampler::merge(cs, &extra)?);
                }
                out
            }
        };
        let nf = fine[0].len();
        if fine.iter().any(|f| f.len() != nf || f.coarse_count() != nc) || coarse.iter().any(|c| c.len() != nc) {
            return Err(ModelError::Input("sample sets must have uniform sizes"));
        }

        // mask plans, one per ray
        let mut plan_rows: Vec<Vec<usize>> = vec![Vec::new(); rays.len()];
        if mode.masks() && opts.mask_ratio > 0.0 {
            for (r, g) in rngs.iter_mut().enumerate() {
                let plan = masking::sample_mask_plan(nf, s, opts.mask_ratio, g)?;
                plan_rows[r] = plan.token_rows(s, r * nf * s);
            }
        }
        let all_rows: Vec<usize> = plan_rows.iter().flatten().copied().collect();
        let f_pass = self.branch_pass(tape, params, views, rays, &fine, Branch::Fine, Some(&all_rows))?;

        let target = tape.constant(Tensor::from_vec(rays.len(), 3, rays.iter().flat_map(|r| r.target).collect()));
        let (nerf, lc, lf) = render::nerf_loss(tape, c_pass.composite.rgb, f_pass.composite.rgb, target)?;

        // auxiliary objective
        let mut degenerate = 0;
        let mut target_var = None;
        let aux: Option<Var> = match mode {
            MrvmMode::Off => None,
            MrvmMode::Default | MrvmMode::FeatMask2 => {
                let shared: Vec<(usize, f64)> = fine
                    .iter()
                    .enumerate()
                    .flat_map(|(r, f)| f.coarse_indices().into_iter().map(move |i| (r * nf + i, 1.0)))
                    .collect();
                let zf = tape.gather(f_pass.pooled, shared.clone(), 1)?;
                let online = mrvm::online_project_predict(tape, params, zf)?;
                let zt = if mode == MrvmMode::Default {
                    c_pass.pooled
                } else {
                    let unmasked = self.trunk_input(tape, f_pass.tokens_unmasked, rays, &fine, s)?;
                    let zt = field::trunk_forward(tape, ema, FINE_TARGET, unmasked)?;
                    let zt = field::pool_views(tape, zt, s)?;
                    tape.gather(zt, shared, 1)?
                };
                let tgt = match fixed.and_then(|f| f.target.as_ref()) {
                    Some(t) => tape.constant(t.clone()),
                    None => mrvm::target_project(tape, ema, zt)?,
                };
                target_var = Some(tgt);
                let l = mrvm::mrvm_loss(tape, online, tgt, nc)?;
                degenerate = l.degenerate;
                Some(l.per_ray)
            }
            MrvmMode::FeatMask1 => {
                let original = match fixed.and_then(|f| f.target.as_ref()) {
                    Some(t) => tape.constant(t.clone()),
                    None => f_pass.tokens_unmasked,
                };
                target_var = Some(original);
                Some(mrvm::featmask1_loss(tape, params, f_pass.token_latents, original, &plan_rows)?)
            }
        };

        let loss = render::total_loss(tape, nerf, aux, opts.lambda, opts.normalizer)?;

        let rows3 = |tape: &Tape, v: Var| -> Vec<[f64; 3]> {
            tape.value(v).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
        };
        let totals = |tape: &Tape, c: &render::BatchComposite, n: usize| -> Vec<f64> {
            let w = tape.value(c.weights).data();
            let res = tape.value(c.residual).data();
            (0..rays.len()).map(|r| w[r * n..(r + 1) * n].iter().sum::<f64>() + res[r]).collect()
        };
        let stats = ChunkStats {
            loss: tape.value(loss).item(),
            color_coarse: rows3(tape, c_pass.composite.rgb),
            color_fine: rows3(tape, f_pass.composite.rgb),
            nerf_coarse: tape.value(lc).data().to_vec(),
            nerf_fine: tape.value(lf).data().to_vec(),
            aux: aux.map_or_else(|| vec![0.0; rays.len()], |a| tape.value(a).data().to_vec()),
            weight_total_coarse: totals(tape, &c_pass.composite, nc),
            weight_total_fine: totals(tape, &f_pass.composite, nf),
            fine_samples: nf,
            masked_entries: all_rows.len(),
            degenerate_pairs: degenerate,
        };
        Ok(Forward { loss, stats, target: target_var })
    }

    /// Tokens → trunk → pool → decode → composite for one branch.
    #[allow(clippy::too_many_arguments)]
    fn branch_pass(
        &self,
        tape: &mut Tape,
        params: &Bound<'_>,
        views: &ViewStack<'_>,
        rays: &[RayInput],
        samples: &[DepthSamples],
        branch: Branch,
        mask_rows: Option<&[usize]>,
    ) -> Result<BranchPass, ModelError> {
        let s = views.count();
        let points: Vec<Vec3> = rays.iter().zip(samples).flat_map(|(r, ds)| ds.t.iter().map(move |&t| r.ray.at(t))).collect();
        let TokenBatch { h, .. } = encoder::gather_tokens(tape, params, views, &points)?;
        let masked = match mask_rows {
            Some(rows) if !rows.is_empty() => {
                let m = params.var(MASK_TOKEN)?;
                masking::apply_mask(tape, h, rows, m)?
            }
            _ => h,
        };
        let input = self.trunk_input(tape, masked, rays, samples, s)?;
        let prefix = branch.prefix();
        let token_latents = field::trunk_forward(tape, params, prefix, input)?;
        let pooled = field::pool_views(tape, token_latents, s)?;
        let extra = if self.config.view_dirs {
            let n = samples[0].len();
            let mut enc = Tensor::zeros(points.len(), VIEW_DIR_DIM);
            for (r, ray) in rays.iter().enumerate() {
                let e = view_dir_encoding(ray.ray.direction);
                for i in 0..n {
                    enc.row_slice_mut(r * n + i).copy_from_slice(&e);
                }
            }
            Some(tape.constant(enc))
        } else {
            None
        };
        let dec = field::decode(tape, params, prefix, pooled, extra)?;
        let deltas: Vec<f64> = samples.iter().flat_map(DepthSamples::deltas).collect();
        let composite = render::composite_batch(tape, dec.sigma, dec.rgb, &deltas, samples[0].len(), self.config.background)?;
        Ok(BranchPass { tokens_unmasked: h, token_latents, pooled, composite })
    }

    fn trunk_input(&self, tape: &mut Tape, tokens: Var, rays: &[RayInput], samples: &[DepthSamples], views: usize) -> Result<Var, DiffError> {
        if !self.config.depth_encoding {
            return Ok(tokens);
        }
        let u: Vec<f64> = rays
            .iter()
            .zip(samples)
            .flat_map(|(r, ds)| ds.t.iter().map(move |&t| (t - r.ray.t_near) / (r.ray.t_far - r.ray.t_near)))
            .collect();
        encoder::with_depth_encoding(tape, tokens, &u, views)
    }
}

struct BranchPass {
    tokens_unmasked: Var,
    token_latents: Var,
    pooled: Var,
    composite: render::BatchComposite,
}

impl ChunkStats {
    /// Appends another chunk's per-ray records and adds its counters.
    pub fn merge(&mut self, other: ChunkStats) {
        self.loss += other.loss;
        self.color_coarse.extend(other.color_coarse);
        self.color_fine.extend(other.color_fine);
        self.nerf_coarse.extend(other.nerf_coarse);
        self.nerf_fine.extend(other.nerf_fine);
        self.aux.extend(other.aux);
        self.weight_total_coarse.extend(other.weight_total_coarse);
        self.weight_total_fine.extend(other.weight_total_fine);
        self.fine_samples = self.fine_samples.max(other.fine_samples);
        self.masked_entries += other.masked_entries;
        self.degenerate_pairs += other.degenerate_pairs;
    }

    pub fn mean(values: &[f64]) -> f64 {
        if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 }
    }
}

/// `[d, sin(2^k π d), cos(2^k π d)]` for k = 0, 1.
pub fn view_dir_encoding(d: Vec3) -> [f64; VIEW_DIR_DIM] {
    let mut out = [0.0; VIEW_DIR_DIM];
    out[..3].copy_from_slice(&d);
    let mut i = 3;
    for k in 0..2 {
        for &x in &d {
            let a = math::powi(2.0, k) * core::f64::consts::PI * x;
            out[i] = math::sin(a);
            out[i + 1] = math::cos(a);
            i += 2;
        }
    }
    out
}

fn collect(grads: &mut crate::diff::Gradients, vars: &[Var], params: &ParamStore) -> Vec<Tensor> {
    vars.iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect()
}

pub fn zeros_like(params: &ParamStore) -> Vec<Tensor> {
    params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
}

pub fn add_all(into: &mut [Tensor], from: &[Tensor]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.add_assign(b);
    }
}

/// One rng per ray, keyed by seed, iteration and global ray index.
pub fn ray_rngs(seed: u64, stream: u64, iter: u64, first_ray: usize, count: usize) -> Vec<StreamRng> {
    (0..count).map(|i| substream(seed, &[stream, iter, (first_ray + i) as u64])).collect()
}

/// Names of parameters that received an exactly-zero gradient.
pub fn zero_gradient_params(params: &ParamStore, grads: &[Tensor]) -> Vec<String> {
    params
        .names()
        .iter()
        .zip(grads)
        .filter(|(_, g)| g.data().iter().all(|&v| v == 0.0))
        .map(|(n, _)| n.clone())
        .collect()
}

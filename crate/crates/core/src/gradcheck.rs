//! Finite-difference check of the whole pipeline on a micro configuration:
//! one ray, four coarse points, two reference views, tiny networks.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::diff::{finite_diff_check, DiffError, GradCheck, ParamStore, Tape, Tensor, Var};
use crate::geometry::{look_at, ray_for_pixel, Camera};
use crate::math;
use crate::model::{ray_rngs, Frozen, Model, ModelConfig, ModelError, PassOptions, RayInput, References};
use crate::mrvm::MrvmMode;
use crate::rng::{purpose, substream};
use crate::sampler::{self, DepthSamples};

pub const STEP: f64 = 1e-5;

pub fn micro_config(mode: MrvmMode) -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        token_dim: 4,
        hidden: 5,
        latent_dim: 4,
        proj_hidden: 4,
        proj_dim: 3,
        n_coarse: 4,
        n_fine_extra: 2,
        mode,
        ..ModelConfig::default()
    }
}

/// `views` random `size×size` images on cameras circling the origin.
pub fn micro_references(views: usize, size: usize, seed: u64) -> References {
    let mut rng = substream(seed, &[]);
    let mut cameras = Vec::new();
    let mut px = Vec::new();
    for j in 0..views {
        let a = 0.6 * j as f64;
        let eye = [3.0 * math::cos(a), 3.0 * math::sin(a), 0.4];
        cameras.push(Camera::with_fov(0.9, size, size, look_at(eye, [0.0; 3], [0.0, 0.0, 1.0]).unwrap()).unwrap());
        for _ in 0..size * size * 3 {
            px.push(rng.random::<f64>());
        }
    }
    References { cameras, height: size, width: size, images: Tensor::from_vec(views * size * size, 3, px) }
}

/// `n` target rays through the same region, depth range `[2, 4]`.
pub fn micro_rays(n: usize) -> Vec<RayInput> {
    let cam = Camera::with_fov(0.9, 6, 6, look_at([3.0, -0.4, 0.6], [0.0; 3], [0.0, 0.0, 1.0]).unwrap()).unwrap();
    (0..n)
        .map(|i| {
            let r = ray_for_pixel(&cam, 2.0 + i as f64 * 0.5, 2.5).unwrap().with_range(2.0, 4.0).unwrap();
            RayInput { ray: r, target: [0.3, 0.6, 0.2] }
        })
        .collect()
}

/// Deterministic coarse bins plus fixed extra depths, so perturbing a
/// parameter cannot move the sample positions.
pub fn frozen_samples(config: &ModelConfig, rays: &[RayInput]) -> Result<Frozen, ModelError> {
    let mut coarse = Vec::with_capacity(rays.len());
    let mut fine = Vec::with_capacity(rays.len());
    for r in rays {
        let c: DepthSamples = sampler::stratified(r.ray.t_near, r.ray.t_far, config.n_coarse, &mut substream(0, &[]), false)?;
        let extra: Vec<f64> = (0..config.n_fine_extra)
            .map(|k| {
                let i = (2 * k) % (c.len() - 1).max(1);
                c.t[i] + (0.37 + 0.24 * k as f64) % 1.0 * (c.t[(i + 1).min(c.len() - 1)] - c.t[i])
            })
            .collect();
        fine.push(sampler::merge(&c, &extra)?);
        coarse.push(c);
    }
    Ok(Frozen { coarse, fine, target: None })
}

/// Central differences against reverse mode for every parameter of a micro
/// model in `mode`, with masking at ratio 0.5 and `λ = 1`. Sample depths and
/// the stop-gradient targets are computed once and held fixed.
pub fn pipeline_gradcheck(mode: MrvmMode, seed: u64) -> Result<GradCheck, ModelError> {
    let model = Model::new(micro_config(mode), seed)?;
    let refs = micro_references(2, 5, seed + 100);
    let rays = micro_rays(1);
    let mut fixed = frozen_samples(&model.config, &rays)?;
    let opts = PassOptions { pretrain: true, mask_ratio: 0.5, jitter: false, lambda: 1.0, normalizer: 1 };
    {
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape);
        let be = model.ema.bind_frozen(&mut tape);
        let mut rngs = ray_rngs(seed, purpose::BATCH, 0, 0, 1);
        let f = model.loss_on_tape(&mut tape, &b, &be, &refs, &rays, &mut rngs, &opts, Some(&fixed))?;
        fixed.target = f.target.map(|t| tape.value(t).clone());
    }
    let report = finite_diff_check(
        |tape, b| {
            let be = model.ema.bind_frozen(tape);
            let mut rngs = ray_rngs(seed, purpose::BATCH, 0, 0, 1);
            model.loss_on_tape(tape, b, &be, &refs, &rays, &mut rngs, &opts, Some(&fixed)).map(|f| f.loss).map_err(|e| match e {
                ModelError::Diff(d) => d,
                _ => DiffError::InvalidArgument { op: "pipeline_gradcheck", reason: "pipeline error" },
            })
        },
        &model.params,
        STEP,
    )?;
    Ok(report)
}

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = substream(seed, &[]);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
}

/// Worst relative error of `op` on random leaves of the given shapes, reduced
/// to a scalar by a fixed random projection of its output.
fn op_error(shapes: &[(usize, usize)], positive: bool, op: impl Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>) -> Result<f64, DiffError> {
    let mut store = ParamStore::new(0);
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let mut t = random(r, c, 100 + i as u64);
        if positive {
            t = t.map(|v| v + 1.5);
        }
        store.insert(&alloc::format!("p{i}"), t)?;
    }
    let report = finite_diff_check(
        |tape, b| {
            let out = op(tape, b.vars())?;
            let (r, c) = tape.value(out).shape();
            let w = tape.constant(random(r, c, 7));
            tape.dot(out, w)
        },
        &store,
        1e-5,
    )?;
    Ok(report.max_rel_error)
}

/// Worst relative error per tape operation, each on random inputs.
pub fn op_gradchecks() -> Result<Vec<(&'static str, f64)>, DiffError> {
    Ok(vec![
        ("add", op_error(&[(3, 2), (3, 2)], false, |t, v| t.add(v[0], v[1]))?),
        ("sub", op_error(&[(3, 2), (3, 2)], false, |t, v| t.sub(v[0], v[1]))?),
        ("mul", op_error(&[(3, 2), (3, 2)], false, |t, v| t.mul(v[0], v[1]))?),
        ("scale", op_error(&[(3, 2)], false, |t, v| Ok(t.scale(v[0], -2.5)))?),
        ("offset", op_error(&[(3, 2)], false, |t, v| Ok(t.offset(v[0], 0.7)))?),
        ("matvec", op_error(&[(4, 3), (3, 1)], false, |t, v| t.matvec(v[0], v[1]))?),
        ("matmul", op_error(&[(4, 3), (3, 5)], false, |t, v| t.matmul(v[0], v[1]))?),
        ("relu", op_error(&[(4, 3)], false, |t, v| Ok(t.relu(v[0])))?),
        ("softplus", op_error(&[(4, 3)], false, |t, v| Ok(t.softplus(v[0])))?),
        ("sigmoid", op_error(&[(4, 3)], false, |t, v| Ok(t.sigmoid(v[0])))?),
        ("exp", op_error(&[(4, 3)], false, |t, v| Ok(t.exp(v[0])))?),
        ("log", op_error(&[(4, 3)], true, |t, v| t.log(v[0]))?),
        ("sum", op_error(&[(4, 3)], false, |t, v| Ok(t.sum(v[0])))?),
        ("mean", op_error(&[(4, 3)], false, |t, v| t.mean(v[0]))?),
        ("row_sum", op_error(&[(4, 3)], false, |t, v| Ok(t.row_sum(v[0])))?),
        ("l2norm", op_error(&[(4, 3)], false, |t, v| Ok(t.l2norm(v[0])))?),
        ("normalize", op_error(&[(4, 3)], false, |t, v| Ok(t.normalize(v[0])))?),
        ("concat", op_error(&[(3, 2), (3, 4)], false, |t, v| t.concat(&[v[0], v[1], v[0]]))?),
        ("slice", op_error(&[(3, 5)], false, |t, v| t.slice(v[0], 1, 3))?),
        ("broadcast_row", op_error(&[(1, 3)], false, |t, v| t.broadcast(v[0], 4, 3))?),
        ("broadcast_col", op_error(&[(4, 1)], false, |t, v| t.broadcast(v[0], 4, 3))?),
        ("broadcast_scalar", op_error(&[(1, 1)], false, |t, v| t.broadcast(v[0], 2, 3))?),
        ("dot", op_error(&[(3, 2), (3, 2)], false, |t, v| t.dot(v[0], v[1]))?),
        ("group_sum", op_error(&[(6, 2)], false, |t, v| t.group_sum(v[0], 3))?),
        ("group_mean", op_error(&[(6, 2)], false, |t, v| t.group_mean(v[0], 2))?),
        ("exclusive_cumsum", op_error(&[(6, 2)], false, |t, v| t.exclusive_cumsum(v[0], 3))?),
        ("replace_rows", op_error(&[(5, 3), (1, 3)], false, |t, v| t.replace_rows(v[0], v[1], &[1, 3, 3]))?),
        (
            "gather",
            op_error(&[(4, 3)], false, |t, v| t.gather(v[0], vec![(0, 0.5), (3, -1.0), (2, 0.0), (2, 2.0), (0, 0.25), (1, 1.0)], 2))?,
        ),
        ("im2col", op_error(&[(2 * 3 * 4, 2)], false, |t, v| t.im2col3x3(v[0], 3, 4))?),
    ])
}

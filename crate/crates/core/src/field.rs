//! Per-branch radiance field: token trunk, view pooling and decoding.

use alloc::format;
use alloc::string::String;
use rand::Rng;

use crate::diff::{Bound, DiffError, ParamStore, Tape, Var};
use crate::nn;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Coarse,
    Fine,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Coarse => "coarse",
            Branch::Fine => "fine",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    /// Token width fed to the trunk (including any appended encodings).
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    /// Extra per-point columns concatenated to the color head input.
    pub color_extra: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { input_dim: 32, hidden: 64, latent_dim: 32, color_extra: 0 }
    }
}

fn name(prefix: &str, layer: &str) -> String {
    format!("{prefix}.{layer}")
}

/// Trunk weights only, under `<prefix>.trunk.l{1,2,3}`.
pub fn init_trunk<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, cfg: &FieldConfig) -> Result<(), DiffError> {
    nn::init_linear(store, rng, &name(prefix, "trunk.l1"), cfg.input_dim, cfg.hidden)?;
    nn::init_linear(store, rng, &name(prefix, "trunk.l2"), cfg.hidden, cfg.hidden)?;
    nn::init_linear(store, rng, &name(prefix, "trunk.l3"), cfg.hidden, cfg.latent_dim)
}

/// Trunk and decoding head for one branch.
pub fn init_branch<R: Rng>(store: &mut ParamStore, rng: &mut R, branch: Branch, cfg: &FieldConfig) -> Result<(), DiffError> {
    let p = branch.prefix();
    init_trunk(store, rng, p, cfg)?;
    nn::init_linear(store, rng, &name(p, "head.l1"), cfg.latent_dim, cfg.hidden)?;
    nn::init_linear(store, rng, &name(p, "head.sigma"), cfg.hidden, 1)?;
    nn::init_linear(store, rng, &name(p, "head.rgb"), cfg.hidden + cfg.color_extra, 3)
}

/// Per-token latents `z_i^j`, shared weights across tokens. `[n, in] → [n, latent]`.
pub fn trunk_forward(tape: &mut Tape, params: &Bound<'_>, prefix: &str, tokens: Var) -> Result<Var, DiffError> {
    if tape.value(tokens).rows() == 0 {
        return Err(DiffError::InvalidArgument { op: "trunk_forward", reason: "no tokens" });
    }
    let x = nn::linear(tape, params, &name(prefix, "trunk.l1"), tokens)?;
    let x = tape.relu(x);
    let x = nn::linear(tape, params, &name(prefix, "trunk.l2"), x)?;
    let x = tape.relu(x);
    nn::linear(tape, params, &name(prefix, "trunk.l3"), x)
}

/// Mean over each point's `views` consecutive latents, summed in view order.
pub fn pool_views(tape: &mut Tape, latents: Var, views: usize) -> Result<Var, DiffError> {
    tape.group_mean(latents, views)
}

/// Density and color per point.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// `[n, 1]`, softplus output.
    pub sigma: Var,
    /// `[n, 3]`, sigmoid output.
    pub rgb: Var,
}

/// `z → (softplus(σ_raw), sigmoid(rgb_raw))`. `color_extra` must be given when
/// the head was built with extra color inputs.
pub fn decode(tape: &mut Tape, params: &Bound<'_>, prefix: &str, z: Var, color_extra: Option<Var>) -> Result<Decoded, DiffError> {
    let h = nn::linear(tape, params, &name(prefix, "head.l1"), z)?;
    let h = tape.relu(h);
    let s = nn::linear(tape, params, &name(prefix, "head.sigma"), h)?;
    let sigma = tape.softplus(s);
    let hc = match color_extra {
        Some(e) => tape.concat(&[h, e])?,
        None => h,
    };
    let c = nn::linear(tape, params, &name(prefix, "head.rgb"), hc)?;
    let rgb = tape.sigmoid(c);
    Ok(Decoded { sigma, rgb })
}

/// Parameter names of a branch's trunk, in registration order.
pub fn trunk_param_names(prefix: &str) -> [String; 6] {
    let l = |k: usize, p: &str| format!("{prefix}.trunk.l{k}.{p}");
    [l(1, "w"), l(1, "b"), l(2, "w"), l(2, "b"), l(3, "w"), l(3, "b")]
}

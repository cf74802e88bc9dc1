//! Fully connected layers stored in a [`ParamStore`] under `<prefix>.w` / `<prefix>.b`.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

use crate::diff::{Bound, DiffError, ParamStore, Tape, Tensor, Var};
use crate::math;

/// Uniform(±1/√fan_in) weights and biases.
pub fn init_linear<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<(), DiffError> {
    let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    store.insert(&format!("{prefix}.w"), Tensor::from_vec(fan_in, fan_out, w))?;
    store.insert(&format!("{prefix}.b"), Tensor::from_vec(1, fan_out, b))?;
    Ok(())
}

/// `x · W + b` for a row batch `x`.
pub fn linear(tape: &mut Tape, params: &Bound<'_>, prefix: &str, x: Var) -> Result<Var, DiffError> {
    let w = params.var(&format!("{prefix}.w"))?;
    let b = params.var(&format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    let (rows, cols) = tape.value(xw).shape();
    let bb = tape.broadcast(b, rows, cols)?;
    tape.add(xw, bb)
}

/// Two linear layers with a ReLU in between.
pub fn mlp2(tape: &mut Tape, params: &Bound<'_>, prefix: &str, x: Var) -> Result<Var, DiffError> {
    let h = linear(tape, params, &format!("{prefix}.l1"), x)?;
    let h = tape.relu(h);
    linear(tape, params, &format!("{prefix}.l2"), h)
}

pub fn init_mlp2<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    prefix: &str,
    input: usize,
    hidden: usize,
    output: usize,
) -> Result<(), DiffError> {
    init_linear(store, rng, &format!("{prefix}.l1"), input, hidden)?;
    init_linear(store, rng, &format!("{prefix}.l2"), hidden, output)
}

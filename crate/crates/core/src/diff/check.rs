use alloc::string::{String, ToString};

use super::{Bound, DiffError, ParamStore, Tape, Var};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Finite-difference and reverse-mode values at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of every parameter.
///
/// Relative error per coordinate is `|g_fd − g_ad| / max(|g_fd|, |g_ad|, 1e-8)`.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamStore, step: f64) -> Result<GradCheck, DiffError>
where
    F: Fn(&mut Tape, &Bound<'_>) -> Result<Var, DiffError>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(DiffError::InvalidArgument { op: "finite_diff_check", reason: "step must be positive and finite" });
    }

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = loss_fn(&mut tape, &bound)?;
    let grads = tape.backward(root)?;
    let analytic: alloc::vec::Vec<_> = bound.vars().iter().map(|v| grads.get(*v).cloned()).collect();
    drop(bound);

    let eval = |p: &ParamStore| -> Result<f64, DiffError> {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let r = loss_fn(&mut t, &b)?;
        Ok(t.value(r).item())
    };

    let mut work = params.clone();
    let mut report = GradCheck { max_rel_error: 0.0, worst: None, worst_values: (0.0, 0.0), coordinates: 0 };
    for (pi, name) in params.names().iter().enumerate() {
        for k in 0..params.tensors()[pi].len() {
            let orig = params.tensors()[pi].data()[k];
            work.tensors_mut()[pi].data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work.tensors_mut()[pi].data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work.tensors_mut()[pi].data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(DiffError::NonFinite { param: name.to_string(), index: k });
            }
            let fd = (up - down) / (2.0 * step);
            let ad = analytic[pi].as_ref().map_or(0.0, |g| g.data()[k]);
            let denom = fd.abs().max(ad.abs()).max(1e-8);
            let rel = (fd - ad).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k));
                report.worst_values = (fd, ad);
            }
        }
    }
    Ok(report)
}

//! Central finite-difference verification of hand-written gradients.

use super::Module;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn with_param<M: Module<f64>, R>(
    model: &mut M,
    index: usize,
    f: impl FnOnce(&mut super::Param<f64>) -> R,
) -> R {
    let mut f = Some(f);
    let mut out = None;
    let mut i = 0;
    model.visit_params_mut(&mut |p| {
        if i == index {
            out = Some((f.take().expect("visited once"))(p));
        }
        i += 1;
    });
    out.expect("parameter index in range")
}

/// Compares analytic gradients against `(L(w+ε) − L(w−ε)) / 2ε` for every
/// parameter element. `loss` is called with zeroed gradients, accumulates
/// its gradients into the model and returns the loss value.
pub fn finite_diff_check<M, F>(model: &mut M, epsilon: f64, loss: F) -> Result<GradCheckReport>
where
    M: Module<f64>,
    F: FnMut(&mut M) -> Result<f64>,
{
    finite_diff_check_sampled(model, epsilon, usize::MAX, loss)
}

/// Like [`finite_diff_check`] but visits at most `max_per_param` evenly
/// strided elements of each parameter.
pub fn finite_diff_check_sampled<M, F>(
    model: &mut M,
    epsilon: f64,
    max_per_param: usize,
    mut loss: F,
) -> Result<GradCheckReport>
where
    M: Module<f64>,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grad();
    let base = loss(model)?;
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();
    model.zero_grad();
    let again = loss(model)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Numerical(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = if n > max_per_param { n.div_ceil(max_per_param) } else { 1 };
        for k in (0..n).step_by(stride) {
            let orig = with_param(model, pi, |p| p.value.data()[k]);
            with_param(model, pi, |p| p.value.data_mut()[k] = orig + epsilon);
            model.zero_grad();
            let plus = loss(model)?;
            with_param(model, pi, |p| p.value.data_mut()[k] = orig - epsilon);
            model.zero_grad();
            let minus = loss(model)?;
            with_param(model, pi, |p| p.value.data_mut()[k] = orig);

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grads[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_relative_error || !rel.is_finite() {
                report.max_relative_error = rel;
                report.worst_param = name.clone();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    model.zero_grad();
    Ok(report)
}

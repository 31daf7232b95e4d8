use crate::{Error, Result};

use super::Mlp;

/// Denominator floor for the relative error, so that gradients that are
/// zero on both sides do not divide by zero.
pub const ABS_FLOOR: f64 = 1e-6;

/// Anything with a flat, indexable parameter vector.
pub trait Parameterized {
    fn num_params(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
}

impl Parameterized for Mlp {
    fn num_params(&self) -> usize {
        Mlp::num_params(self)
    }

    fn param(&self, index: usize) -> f64 {
        Mlp::param(self, index)
    }

    fn set_param(&mut self, index: usize, value: f64) {
        Mlp::set_param(self, index, value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, ABS_FLOOR)`.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub worst_index: usize,
    pub num_params: usize,
}

/// Compares backprop gradients with central finite differences.
///
/// `loss_and_grad` returns the scalar loss and its analytic gradient in the
/// model's parameter order. Every parameter is perturbed by `±eps` and
/// restored afterwards.
pub fn grad_check<M, F>(model: &mut M, loss_and_grad: F, eps: f64) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: Fn(&M) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {eps}")));
    }
    let (_, analytic) = loss_and_grad(model)?;
    let n = model.num_params();
    if analytic.len() != n {
        return Err(Error::Internal(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            n
        )));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_index: 0,
        num_params: n,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = model.param(i);
        model.set_param(i, orig + eps);
        let plus = loss_and_grad(model)?.0;
        model.set_param(i, orig - eps);
        let minus = loss_and_grad(model)?.0;
        model.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        if rel > report.max_relative_error || rel.is_nan() {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
        report.max_absolute_error = report.max_absolute_error.max(abs);
    }
    Ok(report)
}

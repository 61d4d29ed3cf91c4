//! Central finite-difference checks, used by tests across the workspace.
//!
//! The numeric side only evaluates the forward function, so it stays
//! independent of every backward rule it checks.

use crate::backward::grad;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_index: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Numeric gradient of scalar `f` at `inputs[which]` by central differences.
pub fn numeric_grad(
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    inputs: &[Tensor<f64>],
    which: usize,
    step: f64,
) -> Vec<f64> {
    let base = inputs[which].to_vec();
    let shape = inputs[which].shape().to_vec();
    let eval = |data: Vec<f64>| -> f64 {
        let mut args: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
        args[which] = Tensor::from_vec(data, &shape);
        f(&args).item()
    };
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            (eval(plus) - eval(minus)) / (2.0 * step)
        })
        .collect()
}

/// Compare analytic gradients of scalar `f` with central differences for every
/// input. `floor` keeps relative error meaningful for near-zero gradients.
pub fn check_gradients(
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
    floor: f64,
) -> GradCheckReport {
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach_param).collect();
    let out = f(&leaves);
    assert_eq!(out.numel(), 1, "gradient check needs a scalar function");
    let refs: Vec<&Tensor<f64>> = leaves.iter().collect();
    let analytic = grad(&out, &refs, false);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: None, checked: 0 };
    for (which, a) in analytic.iter().enumerate() {
        let numeric = numeric_grad(f, inputs, which, step);
        let a = a.as_ref().map(Tensor::to_vec).unwrap_or_else(|| vec![0.0; numeric.len()]);
        for (i, (&an, &nu)) in a.iter().zip(&numeric).enumerate() {
            let rel = (an - nu).abs() / an.abs().max(nu.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst_index = Some((which, i));
                }
            }
        }
    }
    report
}

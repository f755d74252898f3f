use super::{Mlp, MlpGrads};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Flat parameter index where the worst disagreement occurred.
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `objective` around
/// `params`, one parameter at a time.
pub fn finite_difference_check<F>(objective: F, params: &Mlp, analytic: &MlpGrads, tolerance: f64) -> FdReport
where
    F: Fn(&Mlp) -> f64,
{
    let mut probe = params.clone();
    let analytic: Vec<f64> = analytic.params().copied().collect();
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.params().nth(i).expect("analytic grads match params");
        set_param(&mut probe, i, original + FD_STEP);
        let up = objective(&probe);
        set_param(&mut probe, i, original - FD_STEP);
        let down = objective(&probe);
        set_param(&mut probe, i, original);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(*a, numeric);
        if err > max_rel_error || err.is_nan() {
            max_rel_error = err;
            worst_index = i;
        }
    }
    FdReport {
        max_rel_error,
        worst_index,
        checked: analytic.len(),
        passed: max_rel_error < tolerance,
    }
}

fn set_param(net: &mut Mlp, index: usize, value: f64) {
    if let Some(p) = net.params_mut().nth(index) {
        *p = value;
    }
}

//! Central finite-difference gradient checker.

use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-3;

/// Floor on the denominator of the relative error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss_fn` at every
/// coordinate of `params`.
pub fn grad_check<F>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_at(loss_fn, params, analytic, step, &all)
}

/// Like [`grad_check`] but only probes the listed coordinates.
pub fn grad_check_at<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    indices: &[usize],
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let base = loss_fn(params);
    if !base.is_finite() {
        return Err(Error::InvalidInput(format!("loss is not finite at the base point: {base}")));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.to_vec();
    for &i in indices {
        if i >= params.len() {
            return Err(Error::InvalidInput(format!(
                "index {i} out of range for {} parameters",
                params.len()
            )));
        }
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss_fn(&probe);
        probe[i] = orig - step;
        let down = loss_fn(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::InvalidInput(format!(
                "loss is not finite when perturbing parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

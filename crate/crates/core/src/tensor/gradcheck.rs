//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// One coordinate to check: element `index` of input number `input`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over probes of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
    pub checked: usize,
    /// Probes left out because a kink lay within the step (see
    /// [`grad_check_piecewise`]).
    pub skipped: usize,
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Gradient check of a scalar function of one tensor over every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    let report = grad_check_inputs(|tape, xs| f(tape, &xs[0]), std::slice::from_ref(x), None, h)?;
    Ok(report.max_rel_error)
}

/// Gradient check of a scalar function of several tensors. With `probes`
/// set, only those coordinates are perturbed; otherwise all of them.
pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    probes: Option<&[Probe]>,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    check_probes(f, inputs, probes, h, None)
}

/// Like [`grad_check_inputs`], for functions that are only piecewise smooth
/// (ReLU, max pooling).
///
/// A probe is skipped when the one-sided differences `(f(x+h) - f(x)) / h`
/// and `(f(x) - f(x-h)) / h` disagree by more than `kink_tolerance` in
/// relative terms. On a smooth stretch they differ by about `h * |f''|`;
/// a kink inside `[x-h, x+h]` makes them differ by the jump in slope, and
/// then the central difference is not an estimate of the gradient at `x`.
/// The central error of a single kink is at most half that disagreement, so
/// a skipped probe never hides an error above `2 * kink_tolerance` that a
/// smooth neighbourhood would have shown.
pub fn grad_check_piecewise<F>(
    f: F,
    inputs: &[Tensor],
    probes: Option<&[Probe]>,
    h: f64,
    kink_tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    check_probes(f, inputs, probes, h, Some(kink_tolerance))
}

fn check_probes<F>(
    f: F,
    inputs: &[Tensor],
    probes: Option<&[Probe]>,
    h: f64,
    kink_tolerance: Option<f64>,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let tracked: Vec<Tensor> = inputs.iter().map(|t| tape.param(t)).collect();
    let y = f(&tape, &tracked)?;
    check_value(&y)?;
    let grads = tape.backward(&y)?;
    let analytic: Vec<Vec<f64>> = tracked.iter().map(|t| grads.or_zeros(t)).collect();

    let all: Vec<Probe>;
    let probes = match probes {
        Some(p) => p,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(input, t)| (0..t.len()).map(move |index| Probe { input, index }))
                .collect();
            &all
        }
    };

    let eval = |probe: Probe, delta: f64| -> Result<f64> {
        let mut xs: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
        xs[probe.input].data_mut()[probe.index] += delta;
        let v = f(&Tape::new(), &xs)?;
        check_value(&v)?;
        Ok(v.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let centre = y.item();
    for &probe in probes {
        let (up, down) = (eval(probe, h)?, eval(probe, -h)?);
        if let Some(tol) = kink_tolerance {
            if relative_error((up - centre) / h, (centre - down) / h) > tol {
                report.skipped += 1;
                continue;
            }
        }
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[probe.input][probe.index], numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = Some(probe);
        }
        report.checked += 1;
    }
    Ok(report)
}

fn check_value(y: &Tensor) -> Result<()> {
    if y.len() != 1 {
        return Err(Error::RootNotScalar(y.shape().to_vec()));
    }
    if !y.item().is_finite() {
        return Err(Error::NonFinite(format!("function value {}", y.item())));
    }
    Ok(())
}

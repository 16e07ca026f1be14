//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Multiplies every analytic gradient before comparison (checker self-test).
    pub corrupt: Option<f64>,
    /// Checks at most this many evenly spaced coordinates per input.
    pub max_coords_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            corrupt: None,
            max_coords_per_input: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Checked coordinates whose `x ± h` evaluations took a different branch
    /// of some piecewise op than `x` did. Central differences are not a valid
    /// oracle there, so a trustworthy check wants this at 0.
    pub kink_crossings: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn coords(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < len && m > 0 => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares the recorded gradient of the scalar built by `f` against central
/// differences `(f(x + h) - f(x - h)) / 2h`, coordinate by coordinate, for
/// every tensor in `inputs`.
pub fn grad_check<F>(inputs: &[Tensor], opts: &GradCheckOptions, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |xs: &[Tensor]| -> Result<(f64, u64), AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.branch_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.branch_signature();
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        kink_crossings: 0,
    };
    for (input, grad) in analytic.iter().enumerate() {
        for index in coords(grad.numel(), opts.max_coords_per_input) {
            let orig = work[input].data()[index];
            work[input].data_mut()[index] = orig + opts.h;
            let (plus, sig_plus) = eval(&work)?;
            work[input].data_mut()[index] = orig - opts.h;
            let (minus, sig_minus) = eval(&work)?;
            work[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = grad.data()[index] * opts.corrupt.unwrap_or(1.0);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(AutodiffError::GradCheckNonFinite { input, index });
            }
            let e = relative_error(a, numeric);
            report.checked += 1;
            if sig_plus != base || sig_minus != base {
                report.kink_crossings += 1;
            }
            if e > report.max_rel_error || report.checked == 1 {
                report = GradCheckReport {
                    max_rel_error: e,
                    worst_input: input,
                    worst_index: index,
                    analytic: a,
                    numeric,
                    ..report
                };
            }
        }
    }
    Ok(report)
}

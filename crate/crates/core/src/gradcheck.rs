//! Central finite-difference gradient checking.
//!
//! The numeric side only re-evaluates the forward closure on perturbed
//! copies of the inputs; it never looks at the recorded graph.

use crate::tensor::{Result, Tensor};

/// Denominator floor for the relative error; entries where both the
/// analytic and numeric gradient are smaller than this are compared on an
/// absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `backward` against central differences of `f` for every element
/// of every input. `f` must be deterministic and build a fresh graph on each
/// call.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for t in inputs {
        t.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        element: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (i, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let orig = t.data()[e];
            t.update_data(|d| d[e] = orig + step);
            let plus = f(inputs)?.item();
            t.update_data(|d| d[e] = orig - step);
            let minus = f(inputs)?.item();
            t.update_data(|d| d[e] = orig);
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[i][e], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report = GradCheckReport {
                    max_rel_error: err,
                    input: i,
                    element: e,
                    analytic: analytic[i][e],
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    Ok(report)
}

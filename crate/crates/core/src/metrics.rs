//! Error measures between density evaluations.

use crate::density::{condition_on, Rtbm};
use crate::error::{Error, Result};
use crate::model::RtbmParams;
use crate::oracle::{student_conditional, StudentTParams};

/// Mean of squared differences between two aligned sequences of
/// linear-space density values.
pub fn mse(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(Error::Dimension {
            context: "density values",
            expected: reference.len(),
            found: candidate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::OutOfRange {
            what: "density value count",
            value: "0".into(),
        });
    }
    let sum: f64 = reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// MSE between a reference conditional density and a candidate, both
/// evaluated at the same points.
pub fn conditional_mse(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    mse(reference, candidate)
}

/// MSE between the analytic Student-t conditional `x₂ | x₁` and the
/// conditional machine derived from `params`, evaluated at `points` (the
/// `x₂` coordinates). Both models are bivariate with `x₁` the first
/// coordinate.
pub fn student_conditional_mse(
    params: &RtbmParams,
    tp: &StudentTParams,
    x1: f64,
    points: &[f64],
) -> Result<f64> {
    let exact = student_conditional(tp, 1, &[x1])?;
    let (child, _) = condition_on(params, &[0], &[x1])?;
    let child = Rtbm::new(child)?;
    let mut reference = Vec::with_capacity(points.len());
    let mut candidate = Vec::with_capacity(points.len());
    for &x2 in points {
        reference.push(exact.log_pdf(&[x2])?.exp());
        candidate.push(child.log_pdf(&[x2])?.exp());
    }
    conditional_mse(&reference, &candidate)
}

//! Central finite-difference gradient checking.
//!
//! Analytic backward passes are validated against this harness in `f64`,
//! where the truncation/roundoff floor of central differences sits far
//! below the pass thresholds used by the test suites.

use crate::scalar::Scalar;

/// Default perturbation step for `f64` checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradient of a scalar-valued function by central differences.
///
/// `f` is re-evaluated with one coordinate of `point` perturbed by `±step`
/// at a time; everything else is held fixed.
pub fn finite_diff_grad<S, F>(mut f: F, point: &[S], step: f64) -> Vec<S>
where
    S: Scalar,
    F: FnMut(&[S]) -> S,
{
    let h = S::from_f64(step);
    let two_h = S::from_f64(2.0 * step);
    let mut perturbed = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + h;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - h;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        grad.push((plus - minus) / two_h);
    }
    grad
}

/// Maximum relative error between analytic and numerical gradients.
///
/// Entries where both sides are below `atol` count as exact agreement, so
/// structurally-zero gradients (masked weights, inactive channels) do not
/// blow up the ratio on finite-difference noise.
pub fn max_rel_err<S: Scalar>(analytic: &[S], numeric: &[S], atol: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            let diff = (a - n).abs();
            if diff <= atol {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

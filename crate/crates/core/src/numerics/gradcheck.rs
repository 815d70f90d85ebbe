//! Central finite differences for validating hand-written backward passes.

use crate::error::{Error, Result};

/// `|a − b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central-difference gradient of `loss_fn` at `params` with step `h`.
pub fn central_difference<F>(mut loss_fn: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = loss_fn(&probe);
        probe[i] = orig - h;
        let minus = loss_fn(&probe);
        probe[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite("finite-difference loss"));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error between `analytic` and the
/// central-difference gradient of `loss_fn`.
pub fn finite_difference_check<F>(loss_fn: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::Size {
            op: "finite_difference_check",
            left: params.len(),
            right: analytic.len(),
        });
    }
    let numeric = central_difference(loss_fn, params, h)?;
    Ok(numeric
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_norm_sq(theta: &[f64]) -> f64 {
        0.5 * theta.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.7, 4.2, 0.9, -2.5];
        let err = finite_difference_check(half_norm_sq, &theta, &theta, 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_step_is_a_precondition_error() {
        let r = finite_difference_check(half_norm_sq, &[1.0], &[1.0], 0.0);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn non_finite_loss_propagates() {
        let r = finite_difference_check(|_| f64::NAN, &[1.0], &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let theta = [1.0, 2.0];
        let err = finite_difference_check(half_norm_sq, &theta, &[1.0, 3.0], 1e-5).unwrap();
        assert!(err > 0.3);
    }
}

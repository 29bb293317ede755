//! Central finite-difference gradient oracle.
//!
//! Nonsmooth points (relu kinks, |x| at 0, coordinate ties in the tandem
//! losses) are excluded by the callers sampling away from them; the checker
//! itself assumes the loss is twice evaluable at the perturbed points.

use crate::error::{Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// Returns `max_i |analytic[i] - fd[i]| / max(1, |fd[i]|)` where
/// `fd[i] = (f(p + h e_i) - f(p - h e_i)) / (2h)`.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &mut [f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Config("finite difference step must be > 0".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "analytic gradient length {} vs parameter count {}",
            analytic.len(),
            params.len()
        )));
    }
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        let original = params[i];
        params[i] = original + h;
        let up = loss_fn(params);
        params[i] = original - h;
        let down = loss_fn(params);
        params[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "loss returned non-finite value near parameter {i}"
            )));
        }
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(w) = w^2 at w = 3: analytic 6, central diff 6 exactly
        let mut params = vec![3.0];
        let err = finite_diff_check(|p| p[0] * p[0], &mut params, &[6.0], 1e-6).unwrap();
        assert!(err < 1e-9, "error {err}");
        assert_eq!(params, vec![3.0]); // restored
    }

    #[test]
    fn wrong_gradient_detected() {
        let mut params = vec![3.0];
        let err = finite_diff_check(|p| p[0] * p[0], &mut params, &[5.0], 1e-6).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_loss_is_oracle_failure() {
        // ln goes NaN on the negative perturbation side
        let mut params = vec![0.0];
        let res = finite_diff_check(|p| p[0].ln(), &mut params, &[0.0], 1e-6);
        assert!(matches!(res, Err(Error::Oracle(_))));
    }
}

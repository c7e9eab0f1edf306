use serde::Serialize;

use super::Matrix;
use crate::{Error, Result};

/// Floor applied to the relative-error denominator.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter_index: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the objective produced a non-finite value.
    pub diagnostic: Option<String>,
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// `f` is evaluated at `params ± h·eᵢ` for every coordinate `i`.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &Matrix,
    analytic: &Matrix,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if params.shape() != analytic.shape() {
        return Err(Error::ShapeMismatch {
            op: "finite_difference_check",
            lhs: params.shape(),
            rhs: analytic.shape(),
        });
    }

    let mut x = params.clone();
    let mut worst = 0.0;
    let mut worst_index = 0;
    for i in 0..x.len() {
        let original = x.data()[i];
        x.data_mut()[i] = original + h;
        let plus = f(&x);
        x.data_mut()[i] = original - h;
        let minus = f(&x);
        x.data_mut()[i] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Ok(GradCheckReport {
                max_relative_error: f64::INFINITY,
                worst_parameter_index: i,
                tolerance,
                passed: false,
                diagnostic: Some(format!(
                    "objective is non-finite around parameter {i}: f(x+h)={plus}, f(x-h)={minus}"
                )),
            });
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic.data()[i], numeric);
        if !(err <= worst) {
            worst = err;
            worst_index = i;
        }
    }

    Ok(GradCheckReport {
        max_relative_error: worst,
        worst_parameter_index: worst_index,
        tolerance,
        passed: worst <= tolerance,
        diagnostic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Matrix::row_vector(vec![3.0]);
        let g = Matrix::row_vector(vec![6.0]);
        let r = finite_difference_check(|p| p.data()[0].powi(2), &x, &g, 1e-5, 1e-5).unwrap();
        assert!(r.passed);
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function() {
        let x = Matrix::row_vector(vec![1.0, -2.0, 0.5]);
        let g = Matrix::zeros(1, 3);
        let r = finite_difference_check(|_| 4.2, &x, &g, 1e-5, 1e-5).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Matrix::row_vector(vec![1.0, 2.0]);
        let g = Matrix::row_vector(vec![2.0, 3.0]);
        let r = finite_difference_check(|p| p.data()[0].powi(2) + p.data()[1].powi(2), &x, &g, 1e-5, 1e-5).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_parameter_index, 1);
        assert!((r.max_relative_error - 0.25).abs() < 1e-6);
    }

    #[test]
    fn non_finite_objective_fails_with_diagnostic() {
        let x = Matrix::row_vector(vec![0.0]);
        let g = Matrix::row_vector(vec![0.0]);
        let r = finite_difference_check(|p| p.data()[0].ln(), &x, &g, 1e-5, 1e-5).unwrap();
        assert!(!r.passed);
        assert!(r.diagnostic.unwrap().contains("non-finite"));
    }

    #[test]
    fn bad_inputs_are_errors() {
        let x = Matrix::row_vector(vec![0.0]);
        assert!(finite_difference_check(|_| 0.0, &x, &x, 0.0, 1e-5).is_err());
        assert!(finite_difference_check(|_| 0.0, &x, &Matrix::zeros(1, 2), 1e-5, 1e-5).is_err());
    }

    #[test]
    fn denominator_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(0.0, 1e-9) - 0.1).abs() < 1e-12);
    }
}

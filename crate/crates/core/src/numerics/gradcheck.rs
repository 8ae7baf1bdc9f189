use super::Matrix;
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over all scalars checked.
    pub max_rel_error: f64,
    pub param_count: usize,
    /// `(matrix index, flat entry index)` of the worst entry.
    pub worst_index: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic_grads` with central differences of `loss_fn` around `params`.
///
/// `loss_fn` receives the full perturbed parameter list on every call.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[Matrix],
    analytic_grads: &[Matrix],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {step}")));
    }
    if params.len() != analytic_grads.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} params vs {} grads", params.len(), analytic_grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(analytic_grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "finite_diff_check",
                format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }

    let mut work = params.to_vec();
    let first = loss_fn(&work);
    let second = loss_fn(&work);
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param_count: 0,
        worst_index: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (m, grad) in analytic_grads.iter().enumerate() {
        for e in 0..grad.data().len() {
            let orig = work[m].data()[e];
            work[m].data_mut()[e] = orig + step;
            let plus = loss_fn(&work);
            work[m].data_mut()[e] = orig - step;
            let minus = loss_fn(&work);
            work[m].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grad.data()[e];
            let err = relative_error(analytic, numeric);
            report.param_count += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_index = (m, e);
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn sum_squares(p: &[Matrix]) -> f64 {
        p.iter().map(Matrix::sum_squares).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let p = Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]).unwrap();
        let g = p.scale(2.0);
        let r = finite_diff_check(sum_squares, &[p], &[g], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.param_count, 4);
    }

    #[test]
    fn zeroed_gradient_is_flagged() {
        let p = Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]).unwrap();
        let r = finite_diff_check(sum_squares, &[p], &[Matrix::zeros(2, 2)], 1e-5).unwrap();
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let calls = Cell::new(0u32);
        let loss = |_: &[Matrix]| {
            calls.set(calls.get() + 1);
            calls.get() as f64
        };
        let p = Matrix::zeros(1, 1);
        let err = finite_diff_check(loss, &[Matrix::zeros(1, 1)], &[p], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Determinism { .. }));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let p = Matrix::zeros(1, 2);
        assert!(finite_diff_check(sum_squares, &[p], &[Matrix::zeros(2, 1)], 1e-5).is_err());
    }
}

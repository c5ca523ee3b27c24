//! Central finite-difference verification of analytic gradients.

/// Default relative tolerance for gradient agreement.
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor below which differences are ignored.
pub const ABS_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: Vec<GradMismatch>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Central difference `(f(x+h e_i) - f(x-h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Compares `analytic` with the numeric gradient of `f` at `x`.
///
/// An entry passes when `|a - n| <= abs_tol + rel_tol * max(|a|, |n|)`.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = numeric_gradient(&mut f, x, 1e-6);
    let mut report = GradCheckReport {
        checked: x.len(),
        failures: Vec::new(),
        max_abs_err: 0.0,
        max_rel_err: 0.0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs();
        let scale = a.abs().max(n.abs());
        report.max_abs_err = report.max_abs_err.max(err);
        if scale > abs_tol {
            report.max_rel_err = report.max_rel_err.max(err / scale);
        }
        if err > abs_tol + rel_tol * scale {
            report.failures.push(GradMismatch {
                index: i,
                analytic: a,
                numeric: n,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        let x = [1.0, -2.0, 0.5];
        let f = |v: &[f64]| v.iter().map(|a| a * a * a).sum::<f64>();
        let analytic: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        let r = check_gradient(f, &x, &analytic, REL_TOL, ABS_TOL);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = [1.0, 2.0];
        let r = check_gradient(|v| v[0] * v[1], &x, &[2.0, 2.0], REL_TOL, ABS_TOL);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].index, 1);
    }
}

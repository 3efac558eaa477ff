//! Central finite differences.

use nalgebra::{DMatrix, DVector};

use super::OptError;

/// Central-difference Jacobian of `f` at `x`.
///
/// Entry (i, j) is (f_i(x + h_j e_j) - f_i(x - h_j e_j)) / (2 h_j) with a
/// per-coordinate step h_j = step * max(1, |x_j|).
pub fn finite_diff_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>, OptError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if step <= 0.0 {
        return Err(OptError::NonPositiveStep(step));
    }
    let n = x.len();
    let mut xp = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..n {
        let h = step * x[j].abs().max(1.0);
        let orig = x[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        if fp.iter().any(|v| !v.is_finite()) || fm.iter().any(|v| !v.is_finite()) {
            return Err(OptError::NonFiniteEval { coordinate: j });
        }
        let col = (fp - fm) / (2.0 * h);
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), n));
        jac.set_column(j, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn linear_map_recovers_matrix() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 4.0, 3.0, 0.25]);
        let f = |x: &DVector<f64>| &a * x;
        let x = DVector::from_vec(vec![0.3, -1.7]);
        let jac = finite_diff_jacobian(f, &x, 1e-6).unwrap();
        assert!((jac - &a).amax() < 1e-9);
    }

    #[test]
    fn product_gradient() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1]]);
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let jac = finite_diff_jacobian(f, &x, 1e-6).unwrap();
        assert!((jac[(0, 0)] - 3.0).abs() < 1e-6);
        assert!((jac[(0, 1)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_names_coordinate() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0].ln(), x[1]]);
        let x = DVector::from_vec(vec![1e-9, 1.0]);
        // x0 - h goes negative, ln() returns NaN.
        let err = finite_diff_jacobian(f, &x, 1e-6).unwrap_err();
        match err {
            OptError::NonFiniteEval { coordinate } => assert_eq!(coordinate, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let f = |x: &DVector<f64>| x.clone();
        let x = DVector::from_vec(vec![1.0]);
        assert!(finite_diff_jacobian(f, &x, 0.0).is_err());
    }

    // Cross-check harness: quadratic map with a known analytic Jacobian,
    // compared on random points.
    #[test]
    fn agrees_with_analytic_jacobian() {
        let f = |x: &DVector<f64>| {
            DVector::from_vec(vec![
                x[0] * x[0] + x[1],
                (2.0 * x[1]).sin(),
                x[0] * x[1] * x[2],
            ])
        };
        let jac_analytic = |x: &DVector<f64>| {
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    2.0 * x[0],
                    1.0,
                    0.0,
                    0.0,
                    2.0 * (2.0 * x[1]).cos(),
                    0.0,
                    x[1] * x[2],
                    x[0] * x[2],
                    x[0] * x[1],
                ],
            )
        };
        let mut rng = Rng::new(31);
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.uniform_in(-2.0, 2.0));
            let fd = finite_diff_jacobian(f, &x, 1e-6).unwrap();
            let an = jac_analytic(&x);
            let scale = an.amax().max(1.0);
            assert!((fd - an).amax() / scale < 1e-4);
        }
    }
}

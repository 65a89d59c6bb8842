//! Small dense helpers shared by the estimators and the theory layer.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{Result, RqdaError};

/// Inverse and log-determinant of a symmetric positive-definite matrix.
pub fn spd_inverse_logdet(a: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(RqdaError::DimensionMismatch {
            expected: n,
            got: a.ncols(),
            context: format!("{what} must be square"),
        });
    }
    let chol = a.clone().cholesky().ok_or_else(|| {
        let diag = a.diagonal();
        RqdaError::NotPositiveDefinite(format!(
            "{what}: Cholesky failed (diagonal range [{:e}, {:e}])",
            diag.min(),
            diag.max()
        ))
    })?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok((inv, log_det))
}

/// Replace `a` by (a + aᵀ)/2 in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Tr[A·B] without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let bt = b.transpose();
    a.iter().zip(bt.iter()).map(|(x, y)| x * y).sum()
}

pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    (a * x).dot(x)
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Relative symmetry defect max|a_ij − a_ji| / max(1, max|a_ij|).
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = max_abs(a).max(1.0);
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Standard normal CDF; erfc keeps precision in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn logspace(lo_exp: f64, hi_exp: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo_exp)],
        _ => (0..count)
            .map(|k| {
                let t = k as f64 / (count - 1) as f64;
                10f64.powf(lo_exp + t * (hi_exp - lo_exp))
            })
            .collect(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-10);
        assert!(normal_cdf(-10.0) < 1e-22);
    }

    #[test]
    fn inverse_and_logdet_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0, 0.5]));
        let (inv, ld) = spd_inverse_logdet(&a, "diag").unwrap();
        assert_relative_eq!(inv[(1, 1)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(ld, 4.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn non_spd_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            spd_inverse_logdet(&a, "bad"),
            Err(RqdaError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn trace_product_matches_product() {
        let a = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
        let b = DMatrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64 * 0.3 - 1.0);
        assert_relative_eq!(trace_product(&a, &b), (&a * &b).trace(), epsilon = 1e-12);
    }

    #[test]
    fn grid_helpers() {
        let g = logspace(-2.0, 2.0, 5);
        assert_relative_eq!(g[0], 0.01, epsilon = 1e-15);
        assert_relative_eq!(g[2], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[4], 100.0, epsilon = 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

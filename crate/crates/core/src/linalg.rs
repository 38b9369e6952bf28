//! Largest-eigenvalue routines for symmetric positive semidefinite operators.

use nalgebra::{DMatrix, DVector};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 5000;
const DENSE_FALLBACK_DIM: usize = 64;

/// Power iteration with a deterministic all-ones start vector and a Rayleigh
/// quotient stopping rule at relative tolerance 1e-10 (max 5000 iterations).
pub(crate) fn lambda_max_power<F>(dim: usize, mut apply: F) -> f64
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut v = DVector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let u = apply(&v);
        let new_lambda = v.dot(&u);
        let norm = u.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = u / norm;
        if (new_lambda - lambda).abs() <= POWER_TOL * new_lambda.abs().max(f64::MIN_POSITIVE) {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}

fn lambda_max_dense(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `lambda_max(X X^T)` via the Gram matrix of the smaller side when
/// `min(n, p) <= 64`, otherwise power iteration applying `X (X^T v)`.
pub fn lambda_max_xxt(x: &DMatrix<f64>) -> f64 {
    let (n, p) = x.shape();
    if n.min(p) <= DENSE_FALLBACK_DIM {
        let gram = if n <= p {
            x * x.transpose()
        } else {
            x.transpose() * x
        };
        lambda_max_dense(&gram)
    } else {
        lambda_max_power(n, |v| x * (x.transpose() * v))
    }
}

/// Largest eigenvalue of a symmetric matrix; dense solve for small
/// dimensions, power iteration otherwise.
pub fn lambda_max_sym(a: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), a.ncols());
    if a.nrows() <= DENSE_FALLBACK_DIM {
        lambda_max_dense(a)
    } else {
        lambda_max_power(a.nrows(), |v| a * v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, STREAM_DESIGN};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identity_has_unit_top_eigenvalue() {
        let x = DMatrix::<f64>::identity(5, 5);
        assert!((lambda_max_xxt(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0, 2.0]));
        assert!((lambda_max_sym(&a) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_agrees_with_dense_eigensolver() {
        // random 5x3 design: dense symmetric eigensolve is the oracle
        let mut rng = stream_rng(42, STREAM_DESIGN);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dense = lambda_max_dense(&(&x * x.transpose()));
        let power = lambda_max_power(5, |v| &x * (x.transpose() * v));
        assert!(
            (power - dense).abs() <= 1e-8 * dense.abs(),
            "power {power} vs dense {dense}"
        );
        // the production entry point takes the dense path at this size
        assert!((lambda_max_xxt(&x) - dense).abs() <= 1e-10 * dense.abs());
    }

    #[test]
    fn large_matrix_uses_power_path() {
        let mut rng = stream_rng(7, STREAM_DESIGN);
        let x = DMatrix::from_fn(80, 70, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dense = lambda_max_dense(&(&x * x.transpose()));
        let via_power = lambda_max_xxt(&x);
        assert!((via_power - dense).abs() <= 1e-7 * dense.abs());
    }
}

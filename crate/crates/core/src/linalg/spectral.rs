use super::{norm, Matrix};
use crate::error::{Error, Result};

/// A linear map that can be applied forwards and transposed without being
/// materialized. Masked weight products are evaluated this way.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Matrix {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x)
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.vecmat(y)
    }
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    operator_norm(m, tol, max_iters)
}

/// Power iteration on `AᵀA`.
///
/// Starts from the first basis vector plus a fixed low-amplitude
/// quasi-random perturbation with full support, so no structured input can
/// be exactly orthogonal to the start. Stops once the Rayleigh quotient
/// `‖Av‖²` moves by less than `tol` relative between sweeps.
pub fn operator_norm<A: LinearOperator + ?Sized>(a: &A, tol: f64, max_iters: usize) -> Result<f64> {
    assert!(tol > 0.0, "operator_norm: tol must be positive");
    let n = a.ncols();
    let mut v = start_vector(n);
    let mut previous: Option<f64> = None;
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let u = a.apply(&v);
        lambda = u.iter().map(|x| x * x).sum::<f64>();
        let w = a.apply_transpose(&u);
        let w_norm = norm(&w);
        if w_norm == 0.0 {
            return Ok(0.0);
        }
        if let Some(prev) = previous {
            if (lambda - prev).abs() <= tol * lambda {
                return Ok(lambda.sqrt());
            }
        }
        previous = Some(lambda);
        v = w.into_iter().map(|x| x / w_norm).collect();
    }
    Err(Error::NonConverged {
        iterations: max_iters,
        estimate: lambda.sqrt(),
    })
}

fn start_vector(n: usize) -> Vec<f64> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1e-2 * (((i as f64 + 1.0) * GOLDEN).fract() - 0.5))
        .collect();
    v[0] += 1.0;
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, RngStream};

    #[test]
    fn identity_and_diagonal() {
        assert!((spectral_norm(&Matrix::identity(3), 1e-12, 100).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::diagonal(&[3.0, 1.0, 0.5]);
        assert!((spectral_norm(&d, 1e-12, 1000).unwrap() - 3.0).abs() < 1e-10);
        // the largest entry need not sit on the first basis vector
        let d = Matrix::diagonal(&[0.5, 1.0, 3.0]);
        assert!((spectral_norm(&d, 1e-12, 1000).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        assert_eq!(spectral_norm(&Matrix::zeros(4, 3), 1e-9, 10).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_matches_closed_form() {
        // u vᵀ has norm ‖u‖‖v‖
        let u = [1.0, -2.0, 2.0];
        let v = [3.0, 4.0];
        let rows: Vec<Vec<f64>> = u.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        assert!((spectral_norm(&m, 1e-12, 100).unwrap() - 15.0).abs() < 1e-10);
    }

    #[test]
    fn budget_exhaustion_reports_non_convergence() {
        let mut rng = RngStream::new(1, 0);
        let m = gaussian_matrix(60, 60, 1.0, &mut rng);
        match spectral_norm(&m, 1e-15, 2) {
            Err(Error::NonConverged { iterations, .. }) => assert_eq!(iterations, 2),
            other => panic!("expected NonConverged, got {other:?}"),
        }
    }
}

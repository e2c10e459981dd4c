use serde::{Deserialize, Serialize};

use super::{dot, RngStream};
use crate::error::{Error, Result};

/// Dense row-major matrix of finite 64-bit values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// `M x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `vᵀ M`, returned as a vector of length `cols`. Zero entries of `v`
    /// skip their row entirely, which makes masked backward passes cheap.
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "vecmat: dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
        out
    }
}

/// A `rows × cols` matrix with iid `N(0, std²)` entries drawn row by row
/// from `rng`.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "gaussian_matrix: empty shape");
    assert!(std >= 0.0 && std.is_finite(), "gaussian_matrix: bad std {std}");
    let mut data = vec![0.0; rows * cols];
    rng.fill_normal(&mut data, std);
    if std == 0.0 {
        // the stream is still consumed; this only normalizes -0.0
        data.iter_mut().for_each(|v| *v = 0.0);
    }
    Matrix { rows, cols, data }
}

/// Multiplies a batch of `n` row vectors (row-major, `n × m.cols()`) by
/// `mᵀ`, giving the `n × m.rows()` batch of images `m x_k`.
pub fn batch_matvec(m: &Matrix, xs: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(xs.len(), n * m.cols, "batch_matvec: dimension mismatch");
    let mut out = vec![0.0; n * m.rows];
    if n == 0 {
        return out;
    }
    // C (n × rows) = X (n × cols) · Mᵀ (cols × rows)
    unsafe {
        matrixmultiply::dgemm(
            n,
            m.cols,
            m.rows,
            1.0,
            xs.as_ptr(),
            m.cols as isize,
            1,
            m.data.as_ptr(),
            1,
            m.cols as isize,
            0.0,
            out.as_mut_ptr(),
            m.rows as isize,
            1,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_the_zero_matrix() {
        let mut rng = RngStream::new(123, 0);
        let m = gaussian_matrix(2, 3, 0.0, &mut rng);
        assert_eq!(m, Matrix::zeros(2, 3));
        assert!(m.as_slice().iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn gaussian_matrix_is_reproducible() {
        let a = gaussian_matrix(10, 10, 1.0, &mut RngStream::new(42, 0));
        let b = gaussian_matrix(10, 10, 1.0, &mut RngStream::new(42, 0));
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = gaussian_matrix(10, 10, 1.0, &mut RngStream::new(42, 1));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn gaussian_matrix_sample_mean_is_centered() {
        // mean of 10^6 iid N(0,1) has sd 1e-3; allow five of them
        let m = gaussian_matrix(1000, 1000, 1.0, &mut RngStream::new(7, 0));
        let mean = m.as_slice().iter().sum::<f64>() / 1e6;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        let var = m.as_slice().iter().map(|v| v * v).sum::<f64>() / 1e6;
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn matvec_and_vecmat_agree_with_hand_values() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.vecmat(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert_eq!(m.transpose().matvec(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn batch_matvec_matches_rowwise_products() {
        let mut rng = RngStream::new(3, 3);
        let m = gaussian_matrix(7, 5, 1.0, &mut rng);
        let xs = gaussian_matrix(4, 5, 1.0, &mut rng);
        let out = batch_matvec(&m, xs.as_slice(), 4);
        for k in 0..4 {
            let expect = m.matvec(xs.row(k));
            for (a, b) in out[k * 7..(k + 1) * 7].iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constructors_reject_bad_shapes() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(Matrix::from_vec(0, 1, vec![]).is_err());
    }
}

//! Small dense solvers.

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Cholesky factor `L` of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("cholesky", "matrix is not square"));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::invalid("matrix is not positive definite"));
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Moore-Penrose pseudo-inverse of a full-row-rank matrix, `A^T (A A^T)^-1`.
pub fn pinv_rows(a: &Matrix) -> Result<Matrix> {
    let gram = a.matmul(&a.transpose())?;
    let l = cholesky(&gram)?;
    let n = gram.rows();
    // Solve (L L^T) X = A column by column of A.
    let mut x = a.clone();
    for c in 0..a.cols() {
        let mut y: Vec<f64> = (0..n).map(|r| a.get(r, c)).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for (r, v) in y.into_iter().enumerate() {
            x.set(r, c, v);
        }
    }
    Ok(x.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pinv_is_right_inverse() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.0, 1.0], vec![0.0, 1.0, 3.0, -1.0]]).unwrap();
        let p = pinv_rows(&a).unwrap();
        let id = a.matmul(&p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}

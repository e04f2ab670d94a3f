//! Small dense linear algebra: inversion and symmetric eigenvalues.
//!
//! Sizes here are the Kronecker factors and Gram matrices of a single
//! layer, so plain O(n³) routines are enough.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Standard product `a · b` (not transposed).
pub fn mul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "mul: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a.get(i, t) * b.get(t, j);
            }
            out[i * m + j] = acc;
        }
    }
    Ok(DenseMatrix::from_vec_unchecked(n, m, out))
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("invert: {}x{} is not square", n, a.cols())));
    }
    let mut lhs = a.data().to_vec();
    let mut rhs = DenseMatrix::identity(n).into_data();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| lhs[x * n + col].abs().total_cmp(&lhs[y * n + col].abs()))
            .unwrap_or(col);
        let p = lhs[pivot * n + col];
        if p.abs() <= 1e-14 * scale {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        if pivot != col {
            for j in 0..n {
                lhs.swap(pivot * n + j, col * n + j);
                rhs.swap(pivot * n + j, col * n + j);
            }
        }
        for j in 0..n {
            lhs[col * n + j] /= p;
            rhs[col * n + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = lhs[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                lhs[r * n + j] -= f * lhs[col * n + j];
                rhs[r * n + j] -= f * rhs[col * n + j];
            }
        }
    }
    DenseMatrix::new(n, n, rhs).map_err(|_| Error::Singular("non-finite inverse".into()))
}

/// Ratio of the largest to the smallest column 2-norm.
///
/// This is a cheap proxy, not a true condition number; callers that need
/// certainty also check the inverse residual.
pub fn column_norm_ratio(a: &DenseMatrix) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for j in 0..a.cols() {
        let norm = (0..a.rows()).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt();
        lo = lo.min(norm);
        hi = hi.max(norm);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `max |a·b - I|`.
pub fn identity_residual(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    let prod = mul(a, b)?;
    let n = prod.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod.get(i, j) - target).abs());
        }
    }
    Ok(worst)
}

pub const JACOBI_TOLERANCE: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotation, sorted in
/// descending order. Iterates until the off-diagonal Frobenius norm is at
/// most [`JACOBI_TOLERANCE`].
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape("eigenvalues of a non-square matrix".into()));
    }
    let mut m = a.data().to_vec();
    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off_norm(&m) > JACOBI_TOLERANCE {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Argument(format!(
                "Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

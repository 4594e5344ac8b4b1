//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use nalgebra::{DMatrix, DVector};

use super::SdpError;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix.
///
/// `values` are ascending and column `k` of `vectors` is the unit eigenvector
/// belonging to `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.get(0).copied().unwrap_or(f64::INFINITY)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Checks symmetry to `1e-12` relative to the largest entry.
pub fn check_symmetric(a: &DMatrix<f64>) -> Result<(), SdpError> {
    if !a.is_square() {
        return Err(SdpError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(SdpError::NotSymmetric { row: i, col: j, gap });
            }
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SdpError::NonFinite);
    }
    Ok(())
}

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi rotations.
///
/// A rotation is applied whenever `|a_pq| > eps * sqrt(|a_pp * a_qq|)`, which
/// gives small eigenvalues of diagonally scaled definite matrices to high
/// relative accuracy. The input is symmetrized before iterating.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEigen, SdpError> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                if apq.abs() <= f64::EPSILON * (app * aqq).abs().sqrt() {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Smallest eigenvalue, or an error for non-symmetric input.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64, SdpError> {
    Ok(sym_eig(a)?.min())
}

/// Largest eigenvalue, or an error for non-symmetric input.
pub fn max_eigenvalue(a: &DMatrix<f64>) -> Result<f64, SdpError> {
    Ok(sym_eig(a)?.max())
}

//! Dense linear algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending and
/// eigenvectors stored as the matching columns.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricEigen {
    fn sorted(values: Vec<f64>, vectors: DMatrix<f64>) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let sorted_values = order.iter().map(|&i| values[i]).collect();
        let sorted_vectors = DMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
        Self { values: sorted_values, vectors: sorted_vectors }
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `1e-12 * ||A||_F`.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    const MAX_SWEEPS: usize = 100;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension { expected: n, found: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in eigenproblem".into()));
    }
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-12 * a.norm();

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= tol {
            let values = (0..n).map(|i| m[(i, i)]).collect();
            return Ok(SymmetricEigen::sorted(values, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
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
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numeric(format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")))
}

/// Symmetric-definite generalized eigenproblem `A w = lambda B w`.
///
/// Whitens with the Cholesky factor `B = L L^T`, solves the standard problem
/// for `L^-1 A L^-T` with [`jacobi_eigen`], and maps back with `w = L^-T v`.
/// The returned vectors are therefore B-orthonormal.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, found: b.nrows() });
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let whitened = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let eig = jacobi_eigen(&whitened)?;
    let vectors = l
        .transpose()
        .solve_upper_triangular(&eig.vectors)
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
    Ok(SymmetricEigen { values: eig.values, vectors })
}

/// Eigendecomposition for large symmetric matrices (used by BLDA).
pub fn symmetric_eigen_large(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension { expected: n, found: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in eigenproblem".into()));
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let values = (0..n).map(|i| s[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok(SymmetricEigen::sorted(values, vectors))
}

/// Minimum-norm least-squares solution of `H x = t` through the SVD
/// pseudoinverse; singular values below `rel_tol * sigma_max` are dropped.
pub fn pinv_solve(h: &DMatrix<f64>, t: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
    if h.nrows() != t.len() {
        return Err(Error::Dimension { expected: h.nrows(), found: t.len() });
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in least-squares system".into()));
    }
    let svd = h.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max;
    let ut_t = u.transpose() * t;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            scaled[i] = ut_t[i] / s;
        }
    }
    Ok(v_t.transpose() * scaled)
}

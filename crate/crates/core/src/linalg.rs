//! Small dense kernels: symmetric eigen-solve, pivoted QR, reduced solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues sorted in descending order and the matching
/// eigenvectors as columns. Sweeps stop once the off-diagonal Frobenius norm
/// falls below `tol` times the Frobenius norm of the input.
pub fn jacobi_eigen(matrix: &DMatrix<f64>, tol: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::dim("jacobi_eigen (square matrix)", n, matrix.ncols()));
    }
    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = a.norm();
    const MAX_SWEEPS: usize = 100;

    let mut converged = norm == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
        }
        if off.sqrt() <= tol * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
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
    if !converged {
        return Err(Error::Convergence {
            stage: "jacobi eigensolver".into(),
            msg: format!("off-diagonal norm above {tol:e} after {MAX_SWEEPS} sweeps"),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Householder QR with classical column pivoting.
///
/// Returns the column permutation (first entries are the pivots chosen in
/// order) and the magnitudes of the diagonal of R for the pivoted steps.
/// Ties in column norm go to the lowest column index.
pub fn qr_column_pivoting(matrix: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let (m, n) = matrix.shape();
    let mut a = matrix.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..n {
            let nrm: f64 = (k..m).map(|i| a[(i, j)] * a[(i, j)]).sum();
            if nrm > best_norm {
                best_norm = nrm;
                best = j;
            }
        }
        if best != k {
            a.swap_columns(k, best);
            perm.swap(k, best);
        }
        let alpha = best_norm.sqrt();
        diag.push(alpha);
        if alpha == 0.0 {
            continue;
        }
        // Householder vector for column k, rows k..m.
        let sign = if a[(k, k)] >= 0.0 { 1.0 } else { -1.0 };
        let mut hv: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
        hv[0] += sign * alpha;
        let hnorm2: f64 = hv.iter().map(|x| x * x).sum();
        if hnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| hv[i - k] * a[(i, j)]).sum();
            let f = 2.0 * dot / hnorm2;
            for i in k..m {
                a[(i, j)] -= f * hv[i - k];
            }
        }
    }
    (perm, diag)
}

/// Outcome of a reduced (small, dense) linear solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    /// Symmetric matrix, Cholesky succeeded.
    Cholesky,
    /// Nonsymmetric matrix solved by LU; the symmetric part is SPD.
    LuSymmetricPartSpd,
    /// Cholesky failed (matrix or its symmetric part not SPD); LU used.
    LuNotSpd,
}

impl SolveKind {
    pub fn spd(self) -> bool {
        !matches!(self, SolveKind::LuNotSpd)
    }
}

/// Solve `a x = rhs` for a small dense reduced matrix.
///
/// Symmetric matrices (to `sym_tol` relative) go through Cholesky; otherwise
/// LU is used and positive definiteness is checked on the symmetric part.
pub fn reduced_solve(a: &DMatrix<f64>, rhs: &DVector<f64>, sym_tol: f64) -> Result<(DVector<f64>, SolveKind)> {
    let scale = a.amax();
    let asym = (a - a.transpose()).amax();
    if asym <= sym_tol * scale {
        if let Some(ch) = a.clone().cholesky() {
            return Ok((ch.solve(rhs), SolveKind::Cholesky));
        }
        log::warn!("reduced tangent is not positive definite; falling back to LU");
        let x = lu_solve(a, rhs)?;
        return Ok((x, SolveKind::LuNotSpd));
    }
    let sym = (a + a.transpose()) * 0.5;
    let kind = if sym.cholesky().is_some() {
        SolveKind::LuSymmetricPartSpd
    } else {
        log::warn!("symmetric part of the reduced tangent is not positive definite");
        SolveKind::LuNotSpd
    };
    Ok((lu_solve(a, rhs)?, kind))
}

fn lu_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::numerical("reduced solve", "singular reduced matrix"))
}

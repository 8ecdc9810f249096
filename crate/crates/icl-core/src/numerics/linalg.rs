//! Small-matrix linear algebra: singular values, symmetric eigenvalues,
//! and linear solvers.
//!
//! Everything here targets the modest sizes this repository actually uses
//! (context lengths and feature dimensions in the tens to low thousands),
//! favouring simple, auditable algorithms over performance:
//!
//! * one-sided Jacobi for singular values — unconditionally convergent and
//!   accurate for the small matrices of the rank experiments;
//! * cyclic two-sided Jacobi for symmetric eigenvalues — used by the
//!   positive-semidefiniteness checks on kernel Gram matrices;
//! * Cholesky for symmetric positive-definite solves (the ridge systems);
//! * LU with partial pivoting as a general solver and as the independent
//!   oracle the Cholesky path is tested against.

use crate::error::{CoreError, Result};
use crate::numerics::matrix::DenseMatrix;

/// Singular values of `m` in descending order, via one-sided Jacobi:
/// columns of a working copy are repeatedly rotated until mutually
/// orthogonal; the singular values are the resulting column norms.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    // Work on the tall orientation so there are at most `cols` ≤ `rows`
    // columns to orthogonalize.
    let work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (rows, cols) = work.shape();
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| work.col(j).to_vec()).collect();

    let max_sweeps = 60;
    let tol = 1e-15;
    for _ in 0..max_sweeps {
        let mut off = 0.0_f64;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    app += a[p][i] * a[p][i];
                    aqq += a[q][i] * a[q][i];
                    apq += a[p][i] * a[q][i];
                }
                if apq.abs() <= tol * (app * aqq).sqrt().max(f64::MIN_POSITIVE) {
                    continue;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(f64::MIN_POSITIVE));
                // Jacobi rotation that zeroes the (p,q) entry of AᵀA.
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let vp = a[p][i];
                    let vq = a[q][i];
                    a[p][i] = c * vp - s * vq;
                    a[q][i] = s * vp + c * vq;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }

    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if sv.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            op: "singular_values",
        });
    }
    sv.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));
    Ok(sv)
}

/// Smallest singular value.
pub fn smallest_singular_value(m: &DenseMatrix) -> Result<f64> {
    Ok(*singular_values(m)?.last().expect("nonempty spectrum"))
}

/// Numerical rank: the number of singular values above
/// `max(rows, cols) · ε · σ_max` (the usual SVD-threshold convention).
pub fn numerical_rank(m: &DenseMatrix) -> Result<usize> {
    let sv = singular_values(m)?;
    let sigma_max = sv[0];
    if sigma_max == 0.0 {
        return Ok(0);
    }
    let thresh = m.rows().max(m.cols()) as f64 * f64::EPSILON * sigma_max;
    Ok(sv.iter().filter(|&&s| s > thresh).count())
}

/// Eigenvalues of a symmetric matrix, ascending, via cyclic two-sided
/// Jacobi rotations. The input is symmetrized as `(M + Mᵀ)/2` first so that
/// tiny asymmetries from accumulated rounding do not derail the sweep.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(CoreError::ShapeMismatch {
            op: "symmetric_eigenvalues",
            expected: "square matrix".into(),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let n = m.rows();
    let mut a = vec![vec![0.0_f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }

    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.iter().enumerate().map(|(i, r)| r[i].abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    if eig.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            op: "symmetric_eigenvalues",
        });
    }
    eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eig)
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky
/// factorization. Fails with a singular-system error when a pivot is not
/// safely positive (i.e. `A` is not numerically SPD).
pub fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(CoreError::ShapeMismatch {
            op: "cholesky_solve",
            expected: format!("square system of order {n}"),
            got: format!("A {}x{}, b len {}", a.rows(), a.cols(), b.len()),
        });
    }
    // Lower-triangular factor, column by column.
    let mut l = vec![vec![0.0_f64; n]; n];
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d <= n as f64 * f64::EPSILON * scale {
            return Err(CoreError::SingularSystem {
                op: "cholesky_solve",
                detail: format!("non-positive pivot {d:.3e} at column {j}"),
            });
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / l[j][j];
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0_f64; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i][k] * y[k];
        }
        y[i] = v / l[i][i];
    }
    let mut x = vec![0.0_f64; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= l[k][i] * x[k];
        }
        x[i] = v / l[i][i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite { op: "cholesky_solve" });
    }
    Ok(x)
}

/// Solves `A x = b` by LU with partial pivoting. General (no symmetry
/// assumption); also serves as the independent oracle for `cholesky_solve`.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(CoreError::ShapeMismatch {
            op: "lu_solve",
            expected: format!("square system of order {n}"),
            got: format!("A {}x{}, b len {}", a.rows(), a.cols(), b.len()),
        });
    }
    let mut m = vec![vec![0.0_f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.get(i, j);
        }
    }
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        // Partial pivot.
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite entries"))
            .expect("nonempty range");
        if pivot_abs <= n as f64 * f64::EPSILON * scale {
            return Err(CoreError::SingularSystem {
                op: "lu_solve",
                detail: format!("pivot {pivot_abs:.3e} at column {col}"),
            });
        }
        m.swap(col, pivot_row);
        x.swap(col, pivot_row);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for k in (i + 1)..n {
            v -= m[i][k] * x[k];
        }
        x[i] = v / m[i][i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite { op: "lu_solve" });
    }
    Ok(x)
}

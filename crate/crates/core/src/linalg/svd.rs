//! Thin SVD by one-sided (Hestenes) Jacobi rotations, and the
//! Moore-Penrose pseudoinverse built on it.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// Default relative cutoff: singular values below `tol · σ_max` are dropped.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ` of an `m × n`
/// matrix with `m ≥ n`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `m × n`, orthonormal columns for every nonzero singular value.
    pub u: Matrix,
    /// Length `n`, unsorted (column order of the input).
    pub sigma: Vec<f64>,
    /// `n × n` orthogonal.
    pub v: Matrix,
}

/// Computes the thin SVD of a tall (or square) matrix.
pub fn svd(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::shape(
            "svd",
            format!("expected rows >= cols, got {m}x{n}; decompose the transpose"),
        ));
    }
    // Work column-major: each rotation touches two whole columns.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON;
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut u = Matrix::zeros(m, n);
    let mut sigma = Vec::with_capacity(n);
    for (j, col) in cols.iter().enumerate() {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        sigma.push(norm);
        if norm > 0.0 {
            for (i, x) in col.iter().enumerate() {
                u.set(i, j, x / norm);
            }
        }
    }
    let mut vm = Matrix::zeros(n, n);
    for (j, col) in v.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            vm.set(i, j, *x);
        }
    }
    Ok(Svd { u, sigma, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Moore-Penrose pseudoinverse. Singular values at or below
/// `tol · σ_max` are treated as zero.
pub fn pinv(a: &Matrix, tol: f64) -> Result<Matrix> {
    Ok(pinv_with_rank(a, tol)?.0)
}

/// Like [`pinv`], also returning the numerical rank that was kept.
pub fn pinv_with_rank(a: &Matrix, tol: f64) -> Result<(Matrix, usize)> {
    if a.is_empty() {
        return Err(Error::shape("pinv", "empty matrix"));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::Numerical(format!("pinv tolerance must be >= 0, got {tol}")));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("pinv input has non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        let (t, rank) = pinv_with_rank(&a.transpose(), tol)?;
        return Ok((t.transpose(), rank));
    }
    let Svd { u, sigma, v } = svd(a)?;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = tol * smax;
    // A† = V · diag(1/σ) · Uᵀ, restricted to the kept singular values.
    let mut v_scaled = v;
    let mut rank = 0;
    for (j, &s) in sigma.iter().enumerate() {
        let inv = if s > cutoff && s > 0.0 {
            rank += 1;
            1.0 / s
        } else {
            0.0
        };
        for i in 0..v_scaled.rows() {
            let x = v_scaled.get(i, j);
            v_scaled.set(i, j, x * inv);
        }
    }
    Ok((v_scaled.matmul_t(&u)?, rank))
}

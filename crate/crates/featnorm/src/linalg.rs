//! Dense row-major matrices and the small symmetric-eigenvalue toolbox the
//! collapse metrics need. Everything is pure `f64`, single-threaded and
//! deterministic: summations run in a fixed order so repeated runs are
//! bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 2-D matrix of `f64`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "Matrix::new",
                detail: format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from a list of equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimMismatch {
                    op: "Matrix::from_rows",
                    detail: format!("ragged rows: expected {}, got {}", c, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Matrix product with a fixed (row, inner, column) summation order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                detail: format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (j, &b_kj) in b_row.iter().enumerate() {
                    out_row[j] += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    /// Per-row Euclidean norms.
    pub fn row_l2_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimMismatch {
                op: "add",
                detail: format!(
                    "{}x{} + {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add(&other.scale(-1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

const MAX_JACOBI_SWEEPS: usize = 64;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matrix whose columns are
/// the matching eigenvectors, so `a = V diag(lambda) V^T`.
pub fn sym_eig(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sym_tol = 1e-10 * scale.max(1.0);
    let mut max_asym = 0.0f64;
    for r in 0..n {
        for c in (r + 1)..n {
            max_asym = max_asym.max((a.get(r, c) - a.get(c, r)).abs());
        }
    }
    if max_asym > sym_tol {
        return Err(Error::NotSymmetric {
            max_asym,
            tol: sym_tol,
        });
    }

    // Work on the symmetrized copy so roundoff asymmetry cannot drift.
    let mut w = Matrix::from_fn(n, n, |r, c| 0.5 * (a.get(r, c) + a.get(c, r)));
    let mut v = Matrix::identity(n);
    let frob = w.frobenius_norm();
    let conv_tol = 1e-14 * (1.0 + frob);

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w.get(p, q) * w.get(p, q);
            }
        }
        if off.sqrt() <= conv_tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (w.get(q, q) - w.get(p, p)) / (2.0 * apq);
                let t = if theta.abs() > 1e154 {
                    // theta^2 would overflow; use the asymptotic 1/(2 theta).
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = w.get(p, p);
                let aqq = w.get(q, q);
                w.set(p, p, app - t * apq);
                w.set(q, q, aqq + t * apq);
                w.set(p, q, 0.0);
                w.set(q, p, 0.0);
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = w.get(k, p);
                    let akq = w.get(k, q);
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    w.set(k, p, new_kp);
                    w.set(p, k, new_kp);
                    w.set(k, q, new_kq);
                    w.set(q, k, new_kq);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        // One final check: the last sweep may have finished the job.
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w.get(p, q) * w.get(p, q);
            }
        }
        if off.sqrt() > conv_tol {
            return Err(Error::EigNoConvergence {
                sweeps: MAX_JACOBI_SWEEPS,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(j, j).partial_cmp(&w.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| w.get(i, i)).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok((eigenvalues, eigenvectors))
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `tol_factor * n * lambda_max` are treated as zero.
pub fn pinv_psd(a: &Matrix, tol_factor: f64) -> Result<Matrix> {
    let (eigenvalues, v) = sym_eig(a)?;
    let n = a.rows();
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = tol_factor * n as f64 * lambda_max;
    let inv: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| if l > tol { 1.0 / l } else { 0.0 })
        .collect();
    // V diag(inv) V^T, then symmetrize to remove rounding drift.
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (k, &ik) in inv.iter().enumerate() {
                acc += v.get(r, k) * ik * v.get(c, k);
            }
            out.set(r, c, acc);
        }
    }
    Ok(Matrix::from_fn(n, n, |r, c| {
        0.5 * (out.get(r, c) + out.get(c, r))
    }))
}

/// Default pseudoinverse cutoff factor.
pub const DEFAULT_PINV_TOL: f64 = f64::EPSILON;

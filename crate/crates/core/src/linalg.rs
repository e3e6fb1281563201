//! Small dense linear algebra helpers.
//!
//! Vectors use the Euclidean norm throughout (self-dual, so the dual norm in the
//! barrier robustness terms is also Euclidean). Matrices use the spectral norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_MAX: usize = 1000;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Single-column matrix.
    pub fn column(col: Vec<f64>) -> Self {
        Self {
            rows: col.len(),
            cols: 1,
            data: col,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += yi * a;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest singular value by power iteration on the smaller Gram matrix.
    pub fn spectral_norm(&self) -> Result<f64> {
        spectral_norm(self, POWER_ITER_TOL, POWER_ITER_MAX)
    }
}

/// Power iteration for `σ_max(A)`.
///
/// Iterates on `AᵀA` (or `AAᵀ` when that is smaller) and stops when the
/// relative change of the singular value estimate drops below `tol`.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if a.data.iter().all(|v| *v == 0.0) || a.rows == 0 || a.cols == 0 {
        return Ok(0.0);
    }
    if !a.is_finite() {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let use_cols = a.cols <= a.rows;
    let dim = if use_cols { a.cols } else { a.rows };
    let gram_apply = |v: &[f64]| -> Vec<f64> {
        if use_cols {
            a.tr_mul_vec(&a.mul_vec(v))
        } else {
            a.mul_vec(&a.tr_mul_vec(v))
        }
    };

    // Fixed, non-symmetric start vector so results are reproducible.
    let mut v: Vec<f64> = (0..dim).map(|j| 1.0 + 0.37 * ((j as f64) * 1.618).sin()).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut sigma = 0.0;
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let w = gram_apply(&v);
        let nw = norm2(&w);
        if nw == 0.0 {
            // Start vector in the null space; restart from a basis vector.
            v = vec![0.0; dim];
            v[0] = 1.0;
            continue;
        }
        let next = nw.sqrt();
        v = w.into_iter().map(|x| x / nw).collect();
        last_change = (next - sigma).abs();
        sigma = next;
        if last_change <= tol * sigma {
            // Final Rayleigh refinement: ||A v|| for the converged unit vector.
            let refined = if use_cols {
                norm2(&a.mul_vec(&v))
            } else {
                norm2(&a.tr_mul_vec(&v))
            };
            return Ok(refined.max(sigma));
        }
    }
    Err(Error::PowerIteration {
        iterations: max_iter,
        last_change,
    })
}

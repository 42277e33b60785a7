// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense kernels plus a Householder QR with column pivoting.
//!
//! Vectors are plain `f64` slices; matrices are `nalgebra::DMatrix<f64>`
//! (column-major), so a matrix column is a contiguous slice.

use nalgebra::DMatrix;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Contiguous view of column `j` of a column-major matrix.
#[inline]
pub fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let rows = m.nrows();
    &m.as_slice()[j * rows..(j + 1) * rows]
}

#[inline]
pub fn col_mut(m: &mut DMatrix<f64>, j: usize) -> &mut [f64] {
    let rows = m.nrows();
    &mut m.as_mut_slice()[j * rows..(j + 1) * rows]
}

/// Largest absolute entry, `0` for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Householder QR with column pivoting, truncated to numerical rank.
///
/// Satisfies `q * r ≈ a[:, pivots]`, where `q` has `rank` orthonormal
/// columns and `r` is `rank × n` upper trapezoidal. Trailing diagonal
/// entries of the triangular factor below `rel_tol * |r[0,0]|` are dropped.
#[derive(Debug, Clone)]
pub struct ColPivQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub pivots: Vec<usize>,
    pub rank: usize,
    /// Full diagonal of the triangular factor before truncation.
    pub diagonal: Vec<f64>,
}

impl ColPivQr {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (m, n) = a.shape();
        let steps = m.min(n);
        let mut work = a.clone();
        let mut pivots: Vec<usize> = (0..n).collect();
        let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(steps);

        for k in 0..steps {
            // pivot: remaining column with the largest trailing norm, lowest index on ties
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..n {
                let c = &col(&work, j)[k..];
                let nrm = dot(c, c);
                if nrm > best_norm {
                    best_norm = nrm;
                    best = j;
                }
            }
            if best != k {
                work.swap_columns(k, best);
                pivots.swap(k, best);
            }

            let x = &col(&work, k)[k..];
            let x_norm = norm(x);
            let mut v = x.to_vec();
            let alpha = if x[0] >= 0.0 { -x_norm } else { x_norm };
            v[0] -= alpha;
            let vv = dot(&v, &v);
            let beta = if vv > 0.0 { 2.0 / vv } else { 0.0 };

            if beta != 0.0 {
                for j in k..n {
                    let c = &mut col_mut(&mut work, j)[k..];
                    let s = beta * dot(&v, c);
                    axpy(-s, &v, c);
                }
            }
            // clean the eliminated part of column k
            let ck = col_mut(&mut work, k);
            ck[k] = if beta != 0.0 { alpha } else { ck[k] };
            for e in ck[k + 1..].iter_mut() {
                *e = 0.0;
            }
            reflectors.push((v, beta));
        }

        let diagonal: Vec<f64> = (0..steps).map(|k| work[(k, k)]).collect();
        let lead = diagonal.first().map_or(0.0, |d| d.abs());
        let rank = if lead == 0.0 {
            0
        } else {
            diagonal
                .iter()
                .take_while(|d| d.abs() >= rel_tol * lead)
                .count()
        };

        let mut q = DMatrix::<f64>::zeros(m, rank);
        for j in 0..rank {
            let qj = col_mut(&mut q, j);
            qj[j] = 1.0;
            for (k, (v, beta)) in reflectors.iter().enumerate().take(rank).rev() {
                if *beta == 0.0 {
                    continue;
                }
                let tail = &mut qj[k..];
                let s = beta * dot(v, tail);
                axpy(-s, v, tail);
            }
        }

        let r = work.rows(0, rank).into_owned();
        ColPivQr {
            q,
            r,
            pivots,
            rank,
            diagonal,
        }
    }

    /// `q * r` with columns restored to the input order.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let pivoted = &self.q * &self.r;
        let mut out = DMatrix::<f64>::zeros(pivoted.nrows(), pivoted.ncols());
        for (j, &p) in self.pivots.iter().enumerate() {
            out.set_column(p, &pivoted.column(j));
        }
        out
    }
}

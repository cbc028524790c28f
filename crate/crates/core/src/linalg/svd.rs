//! Truncated SVD by seeded randomized subspace iteration.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OVERSAMPLE: usize = 10;
pub const MIN_POWER_ITERS: usize = 2;
pub const MAX_POWER_ITERS: usize = 40;
/// Operators with a side at most this long are decomposed exactly.
pub const EXACT_SIDE: usize = 512;

/// Anything that can multiply a dense block from the left, and whose
/// transpose can too.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A * x` for an `ncols × b` block.
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Aᵀ * y` for an `nrows × b` block.
    fn apply_t(&self, y: &DMatrix<f64>) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }

    fn apply_t(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(y)
    }
}

/// Coordinate-form sparse matrix, stored row-sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    /// `row_ptr[i]..row_ptr[i + 1]` indexes row `i` in `entries`.
    row_ptr: Vec<usize>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::DimensionMismatch(format!(
                "entry ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if entries.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::DimensionMismatch("duplicate coordinates".to_string()));
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            entries,
            row_ptr,
        })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[(usize, usize, f64)] {
        &self.entries[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
        }
        m
    }

    /// Column Euclidean norms.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for &(_, c, v) in &self.entries {
            sq[c] += v * v;
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Multiplies column `c` by `scale[c]`.
    pub fn scale_columns(&self, scale: &[f64]) -> SparseMatrix {
        let entries = self.entries.iter().map(|&(r, c, v)| (r, c, v * scale[c])).collect();
        SparseMatrix {
            entries,
            ..self.clone()
        }
    }
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let b = x.ncols();
        // Row-major accumulation, one output row per task.
        let rows: Vec<Vec<f64>> = (0..self.rows)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; b];
                for &(_, c, v) in self.row(i) {
                    for (t, a) in acc.iter_mut().enumerate() {
                        *a += v * x[(c, t)];
                    }
                }
                acc
            })
            .collect();
        DMatrix::from_fn(self.rows, b, |i, t| rows[i][t])
    }

    fn apply_t(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let b = y.ncols();
        let mut out = DMatrix::zeros(self.cols, b);
        for t in 0..b {
            let ycol = y.column(t);
            let mut ocol = out.column_mut(t);
            for &(r, c, v) in &self.entries {
                ocol[c] += v * ycol[r];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    /// Non-increasing.
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub rank: usize,
}

pub fn truncated_svd(m: &SparseMatrix, rank: usize, seed: u64, tol: f64) -> Result<SvdResult> {
    truncated_svd_op(m, rank, seed, tol)
}

/// Leading `rank` singular triplets of `a`.
///
/// When `rank + OVERSAMPLE` covers the smaller dimension, or that dimension is
/// at most `EXACT_SIDE`, the decomposition is exact; otherwise a Gaussian sketch is refined by subspace iteration until
/// the leading singular values move by less than `tol` (relative), with at
/// least `MIN_POWER_ITERS` and at most `MAX_POWER_ITERS` rounds.
///
/// Each left singular vector's largest-magnitude entry is made positive.
pub fn truncated_svd_op<A: LinearOperator + ?Sized>(a: &A, rank: usize, seed: u64, tol: f64) -> Result<SvdResult> {
    randomized_svd(a, rank, seed, Some(tol), MAX_POWER_ITERS)
}

/// Like [`truncated_svd_op`] with exactly `power_iters` rounds of subspace
/// iteration and no convergence test.
pub fn sketched_svd_op<A: LinearOperator + ?Sized>(a: &A, rank: usize, seed: u64, power_iters: usize) -> Result<SvdResult> {
    randomized_svd(a, rank, seed, None, power_iters)
}

fn randomized_svd<A: LinearOperator + ?Sized>(
    a: &A,
    rank: usize,
    seed: u64,
    tol: Option<f64>,
    max_iters: usize,
) -> Result<SvdResult> {
    let (rows, cols) = (a.nrows(), a.ncols());
    let max = rows.min(cols);
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    let l = (rank + OVERSAMPLE).min(max);

    let q = if l == rows || (rows <= EXACT_SIDE && rows <= cols) {
        DMatrix::identity(rows, rows)
    } else if l == cols || cols <= EXACT_SIDE {
        orthonormalize(&a.apply(&DMatrix::identity(cols, cols)))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = DMatrix::from_fn(cols, l, |_, _| StandardNormal.sample(&mut rng));
        let mut q = orthonormalize(&a.apply(&omega));
        let mut prev: Option<DVector<f64>> = None;
        for iter in 0..max_iters {
            let bt = a.apply_t(&q);
            if let Some(tol) = tol.filter(|_| iter + 1 >= MIN_POWER_ITERS) {
                // Singular values of Qᵀ A from the small Gram of Aᵀ Q.
                let s = sorted_singular_values(&bt, rank);
                if let Some(p) = &prev {
                    let scale = s[0].max(f64::MIN_POSITIVE);
                    if (&s - p).amax() <= tol * scale {
                        break;
                    }
                }
                prev = Some(s);
            }
            q = orthonormalize(&a.apply(&orthonormalize(&bt)));
        }
        q
    };

    let (u_small, s, v) = project(a, &q);
    let mut u = &q * u_small.columns(0, rank);
    let mut v = v.columns(0, rank).into_owned();
    let s = s.rows(0, rank).map(|x| x.max(0.0));
    fix_signs(&mut u, &mut v);
    Ok(SvdResult { u, s, v, rank })
}

/// SVD of `Qᵀ A`, returned as (left vectors in Q coordinates, values, right
/// vectors), sorted by decreasing singular value.
fn project<A: LinearOperator + ?Sized>(a: &A, q: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    // Bᵀ = Aᵀ Q is tall (cols × l); its SVD gives B's factors transposed.
    let bt = a.apply_t(q);
    let svd = SVD::new(bt, true, true);
    let ub = svd.u.expect("requested");
    let vbt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]).then(x.cmp(&y)));
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let left = DMatrix::from_fn(vbt.ncols(), order.len(), |r, c| vbt[(order[c], r)]);
    let right = DMatrix::from_fn(ub.nrows(), order.len(), |r, c| ub[(r, order[c])]);
    (left, s, right)
}

/// Leading `rank` singular values of a tall `b`, non-increasing.
fn sorted_singular_values(b: &DMatrix<f64>, rank: usize) -> DVector<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(b.transpose() * b).eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    DVector::from_iterator(rank, ev.into_iter().take(rank))
}

/// Thin orthonormal basis for the columns of `y`: two rounds of Cholesky QR,
/// falling back to Householder QR when the Gram matrix is not positive
/// definite.
pub fn orthonormalize(y: &DMatrix<f64>) -> DMatrix<f64> {
    let chol_qr = |m: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let l = (m.transpose() * m).cholesky()?.l();
        let qt = l.solve_lower_triangular(&m.transpose())?;
        qt.iter().all(|x| x.is_finite()).then(|| qt.transpose())
    };
    if y.ncols() <= y.nrows() {
        if let Some(q) = chol_qr(y).and_then(|q| chol_qr(&q)) {
            return q;
        }
    }
    y.clone().qr().q()
}

/// Makes the largest-magnitude entry of each column of `u` positive, flipping
/// the matching column of `v`.
pub fn fix_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for c in 0..u.ncols() {
        let col = u.column(c);
        let mut best = 0;
        for r in 1..col.len() {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            u.column_mut(c).neg_mut();
            if c < v.ncols() {
                v.column_mut(c).neg_mut();
            }
        }
    }
}

/// Leading `rank` left singular vectors of a dense matrix, computed exactly
/// through a thin QR factorization.
pub fn dense_leading_left(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rank == 0 || rank > rows {
        return Err(Error::RankOutOfRange { rank, max: rows });
    }
    if rows <= cols || rank > cols {
        return leading_eigenvectors(&(m * m.transpose()), rank);
    }
    let qr = m.clone().qr();
    let svd = SVD::new(qr.r(), true, false);
    let ur = svd.u.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]).then(x.cmp(&y)));
    let picked = DMatrix::from_fn(cols, rank, |r, c| ur[(r, order[c])]);
    let mut u = qr.q() * picked;
    let mut none = DMatrix::zeros(0, 0);
    fix_signs(&mut u, &mut none);
    Ok(u)
}

/// Leading `rank` eigenvectors of a symmetric positive semi-definite Gram
/// matrix, i.e. the leading left singular vectors of any `A` with
/// `A Aᵀ = gram`.
pub fn leading_eigenvectors(gram: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if rank == 0 || rank > n {
        return Err(Error::RankOutOfRange { rank, max: n });
    }
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut u = DMatrix::from_fn(n, rank, |r, c| eig.eigenvectors[(r, order[c])]);
    let mut none = DMatrix::zeros(0, 0);
    fix_signs(&mut u, &mut none);
    Ok(u)
}

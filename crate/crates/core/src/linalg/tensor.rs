use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SparseTensor3;
use crate::error::{Error, Result};
use crate::linalg::svd::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

/// Dense row-major 3-way tensor; `(i, j, k)` lives at `(i * d2 + j) * d3 + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor3 {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let at = t.offset(i, j, k);
                    t.data[at] = f(i, j, k);
                }
            }
        }
        t
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn dot(&self, other: &DenseTensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Mode-`n` unfolding: rows index the mode, columns run over the other
    /// two indices in row-major order.
    pub fn unfold(&self, mode: Mode) -> DMatrix<f64> {
        let [d1, d2, d3] = self.dims;
        match mode {
            Mode::One => DMatrix::from_fn(d1, d2 * d3, |i, c| self.get(i, c / d3, c % d3)),
            Mode::Two => DMatrix::from_fn(d2, d1 * d3, |j, c| self.get(c / d3, j, c % d3)),
            Mode::Three => DMatrix::from_fn(d3, d1 * d2, |k, c| self.get(c / d2, c % d2, k)),
        }
    }

    /// Inverse of [`unfold`](Self::unfold).
    pub fn fold(m: &DMatrix<f64>, mode: Mode, dims: [usize; 3]) -> Self {
        let [_, d2, d3] = dims;
        Self::from_fn(dims, |i, j, k| match mode {
            Mode::One => m[(i, j * d3 + k)],
            Mode::Two => m[(j, i * d3 + k)],
            Mode::Three => m[(k, i * d2 + j)],
        })
    }
}

/// `t ×ₙ m`: replaces dimension `n` (size `d`) by `p` for a `p × d` matrix.
pub fn mode_product(t: &DenseTensor3, m: &DMatrix<f64>, mode: Mode) -> Result<DenseTensor3> {
    let n = mode.index();
    if m.ncols() != t.dims[n] {
        return Err(Error::DimensionMismatch(format!(
            "mode-{} product needs {} matrix columns, got {}",
            n + 1,
            t.dims[n],
            m.ncols()
        )));
    }
    let mut dims = t.dims;
    dims[n] = m.nrows();
    Ok(DenseTensor3::fold(&(m * t.unfold(mode)), mode, dims))
}

/// Mode product of a binary sparse tensor: each entry adds the selected
/// matrix column into the output fiber.
pub fn sparse_mode_product(t: &SparseTensor3, m: &DMatrix<f64>, mode: Mode) -> Result<DenseTensor3> {
    let (d1, d2, d3) = t.dims;
    let mut dims = [d1, d2, d3];
    let n = mode.index();
    if m.ncols() != dims[n] {
        return Err(Error::DimensionMismatch(format!(
            "mode-{} product needs {} matrix columns, got {}",
            n + 1,
            dims[n],
            m.ncols()
        )));
    }
    dims[n] = m.nrows();
    let mut out = DenseTensor3::zeros(dims);
    for &(i, j, k) in &t.entries {
        let src = [i, j, k][n];
        for r in 0..m.nrows() {
            let mut at = [i, j, k];
            at[n] = r;
            let off = out.offset(at[0], at[1], at[2]);
            out.data[off] += m[(r, src)];
        }
    }
    Ok(out)
}

impl SparseTensor3 {
    pub fn to_dense(&self) -> DenseTensor3 {
        let (d1, d2, d3) = self.dims;
        let mut t = DenseTensor3::zeros([d1, d2, d3]);
        for &(i, j, k) in &self.entries {
            let off = t.offset(i, j, k);
            t.data[off] += 1.0;
        }
        t
    }
}

/// Sparse real tensor stored as dense mode-3 fibers over the nonzero
/// `(i, j)` pairs. Fibers are sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberTensor {
    pub dims: [usize; 3],
    coords: Vec<(usize, usize)>,
    values: Vec<f64>,
    /// Fiber ids ordered by `(j, i)`, with `item_ptr` delimiting each `j`.
    by_item: Vec<usize>,
    item_ptr: Vec<usize>,
    user_ptr: Vec<usize>,
}

impl FiberTensor {
    /// Builds `X ×₃ scaler` with entry `(i, j, k)` weighted by
    /// `item_weights[j]`. Repeated `(i, j, k)` coordinates add up.
    pub fn from_sparse(t: &SparseTensor3, item_weights: Option<&[f64]>, scaler: Option<&DMatrix<f64>>) -> Result<Self> {
        let (d1, d2, d3) = t.dims;
        if let Some(w) = item_weights {
            if w.len() != d2 {
                return Err(Error::DimensionMismatch(format!(
                    "{} item weights for {} items",
                    w.len(),
                    d2
                )));
            }
        }
        if let Some(s) = scaler {
            if s.nrows() != d3 || s.ncols() != d3 {
                return Err(Error::DimensionMismatch(format!(
                    "rating scaler must be {d3}x{d3}, got {}x{}",
                    s.nrows(),
                    s.ncols()
                )));
            }
        }
        let mut entries = t.entries.clone();
        entries.sort_unstable();
        let mut coords: Vec<(usize, usize)> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for &(i, j, k) in &entries {
            if i >= d1 || j >= d2 || k >= d3 {
                return Err(Error::DimensionMismatch(format!("entry ({i}, {j}, {k}) outside {:?}", t.dims)));
            }
            if coords.last() != Some(&(i, j)) {
                coords.push((i, j));
                values.extend(std::iter::repeat_n(0.0, d3));
            }
            let w = item_weights.map_or(1.0, |w| w[j]);
            let fiber = values.len() - d3;
            match scaler {
                Some(s) => {
                    for r in 0..d3 {
                        values[fiber + r] += w * s[(r, k)];
                    }
                }
                None => values[fiber + k] += w,
            }
        }
        Ok(Self::assemble([d1, d2, d3], coords, values))
    }

    fn assemble(dims: [usize; 3], coords: Vec<(usize, usize)>, values: Vec<f64>) -> Self {
        let mut by_item: Vec<usize> = (0..coords.len()).collect();
        by_item.sort_by_key(|&f| (coords[f].1, coords[f].0));
        let mut item_ptr = vec![0; dims[1] + 1];
        let mut user_ptr = vec![0; dims[0] + 1];
        for &(i, j) in &coords {
            item_ptr[j + 1] += 1;
            user_ptr[i + 1] += 1;
        }
        for j in 0..dims[1] {
            item_ptr[j + 1] += item_ptr[j];
        }
        for i in 0..dims[0] {
            user_ptr[i + 1] += user_ptr[i];
        }
        Self {
            dims,
            coords,
            values,
            by_item,
            item_ptr,
            user_ptr,
        }
    }

    pub fn n_fibers(&self) -> usize {
        self.coords.len()
    }

    pub fn fiber(&self, f: usize) -> &[f64] {
        let k = self.dims[2];
        &self.values[f * k..(f + 1) * k]
    }

    pub fn coord(&self, f: usize) -> (usize, usize) {
        self.coords[f]
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn to_dense(&self) -> DenseTensor3 {
        let mut t = DenseTensor3::zeros(self.dims);
        for (f, &(i, j)) in self.coords.iter().enumerate() {
            for (k, &v) in self.fiber(f).iter().enumerate() {
                let off = t.offset(i, j, k);
                t.data[off] = v;
            }
        }
        t
    }

    /// `Σ_f fiber fiberᵀ`, the Gram matrix of the mode-3 unfolding.
    pub fn mode3_gram(&self) -> DMatrix<f64> {
        let k = self.dims[2];
        let mut g = DMatrix::zeros(k, k);
        for f in 0..self.n_fibers() {
            let x = self.fiber(f);
            for a in 0..k {
                for b in 0..k {
                    g[(a, b)] += x[a] * x[b];
                }
            }
        }
        g
    }

    /// `Wᵀ x` for every fiber, as a flat `n_fibers × r3` buffer.
    fn project_fibers(&self, w: &DMatrix<f64>) -> Vec<f64> {
        let (k, r3) = (self.dims[2], w.ncols());
        let mut out = vec![0.0; self.n_fibers() * r3];
        out.par_chunks_mut(r3.max(1)).enumerate().for_each(|(f, dst)| {
            let x = &self.values[f * k..(f + 1) * k];
            for (c, d) in dst.iter_mut().enumerate() {
                *d = (0..k).map(|r| w[(r, c)] * x[r]).sum();
            }
        });
        out
    }

    /// Mode-1 unfolding of `X ×₂ Vᵀ ×₃ Wᵀ`: `d1 × (r2·r3)`, column `b·r3 + c`.
    pub fn contract_items_ratings(&self, v: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let (r2, r3) = (v.ncols(), w.ncols());
        let proj = self.project_fibers(w);
        let rows: Vec<Vec<f64>> = (0..self.dims[0])
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; r2 * r3];
                for f in self.user_ptr[i]..self.user_ptr[i + 1] {
                    let j = self.coords[f].1;
                    let g = &proj[f * r3..(f + 1) * r3];
                    for b in 0..r2 {
                        let vb = v[(j, b)];
                        if vb != 0.0 {
                            for c in 0..r3 {
                                acc[b * r3 + c] += vb * g[c];
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        DMatrix::from_fn(self.dims[0], r2 * r3, |i, c| rows[i][c])
    }

    /// Mode-2 unfolding of `X ×₁ Uᵀ ×₃ Wᵀ`: `d2 × (r1·r3)`, column `a·r3 + c`.
    pub fn contract_users_ratings(&self, u: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let (r1, r3) = (u.ncols(), w.ncols());
        let proj = self.project_fibers(w);
        let rows: Vec<Vec<f64>> = (0..self.dims[1])
            .into_par_iter()
            .map(|j| {
                let mut acc = vec![0.0; r1 * r3];
                for &f in &self.by_item[self.item_ptr[j]..self.item_ptr[j + 1]] {
                    let i = self.coords[f].0;
                    let g = &proj[f * r3..(f + 1) * r3];
                    for a in 0..r1 {
                        let ua = u[(i, a)];
                        if ua != 0.0 {
                            for c in 0..r3 {
                                acc[a * r3 + c] += ua * g[c];
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        DMatrix::from_fn(self.dims[1], r1 * r3, |j, c| rows[j][c])
    }

    /// `X ×₁ Uᵀ ×₂ Vᵀ` as a dense `r1 × r2 × d3` tensor.
    ///
    /// Users are reduced in fixed blocks and the block partials summed in
    /// order, so the result does not depend on the thread count.
    pub fn contract_users_items(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> DenseTensor3 {
        const BLOCK: usize = 256;
        let (r1, r2, k) = (u.ncols(), v.ncols(), self.dims[2]);
        let dims = [r1, r2, k];
        let n_blocks = self.dims[0].div_ceil(BLOCK);
        let partials: Vec<DenseTensor3> = (0..n_blocks)
            .into_par_iter()
            .map(|blk| {
                let mut part = DenseTensor3::zeros(dims);
                let mut per_user = vec![0.0; r2 * k];
                for i in blk * BLOCK..((blk + 1) * BLOCK).min(self.dims[0]) {
                    let fibers = self.user_ptr[i]..self.user_ptr[i + 1];
                    if fibers.is_empty() {
                        continue;
                    }
                    per_user.iter_mut().for_each(|x| *x = 0.0);
                    for f in fibers {
                        let j = self.coords[f].1;
                        let x = self.fiber(f);
                        for b in 0..r2 {
                            let vb = v[(j, b)];
                            if vb != 0.0 {
                                for (kk, &xv) in x.iter().enumerate() {
                                    per_user[b * k + kk] += vb * xv;
                                }
                            }
                        }
                    }
                    for a in 0..r1 {
                        let ua = u[(i, a)];
                        if ua == 0.0 {
                            continue;
                        }
                        let dst = &mut part.data[a * r2 * k..(a + 1) * r2 * k];
                        for (d, &p) in dst.iter_mut().zip(&per_user) {
                            *d += ua * p;
                        }
                    }
                }
                part
            })
            .collect();
        let mut out = DenseTensor3::zeros(dims);
        for p in &partials {
            for (o, x) in out.data.iter_mut().zip(&p.data) {
                *o += x;
            }
        }
        out
    }

    pub fn unfolding(&self, mode: Mode) -> Unfolding<'_> {
        Unfolding { t: self, mode }
    }
}

/// Mode-1 or mode-2 unfolding of a [`FiberTensor`] as a linear operator.
/// Columns are `(other, k)` pairs at `other · d3 + k`.
pub struct Unfolding<'a> {
    t: &'a FiberTensor,
    mode: Mode,
}

impl Unfolding<'_> {
    fn row_col(&self, f: usize) -> (usize, usize) {
        let (i, j) = self.t.coords[f];
        match self.mode {
            Mode::One => (i, j),
            Mode::Two => (j, i),
            Mode::Three => unreachable!("mode-3 unfoldings use the Gram matrix"),
        }
    }
}

impl LinearOperator for Unfolding<'_> {
    fn nrows(&self) -> usize {
        self.t.dims[self.mode.index()]
    }

    fn ncols(&self) -> usize {
        let [d1, d2, d3] = self.t.dims;
        match self.mode {
            Mode::One => d2 * d3,
            Mode::Two => d1 * d3,
            Mode::Three => d1 * d2,
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.t.dims[2];
        let mut out = DMatrix::zeros(self.nrows(), x.ncols());
        for f in 0..self.t.n_fibers() {
            let (row, other) = self.row_col(f);
            let fib = self.t.fiber(f);
            for c in 0..x.ncols() {
                let s: f64 = fib.iter().enumerate().map(|(kk, &v)| v * x[(other * k + kk, c)]).sum();
                out[(row, c)] += s;
            }
        }
        out
    }

    fn apply_t(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.t.dims[2];
        let mut out = DMatrix::zeros(self.ncols(), y.ncols());
        for f in 0..self.t.n_fibers() {
            let (row, other) = self.row_col(f);
            let fib = self.t.fiber(f);
            for c in 0..y.ncols() {
                let yv = y[(row, c)];
                for (kk, &v) in fib.iter().enumerate() {
                    out[(other * k + kk, c)] += v * yv;
                }
            }
        }
        out
    }
}

//! Tucker decomposition by higher-order orthogonal iteration, run directly on
//! fiber-grouped sparse tensors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SparseTensor3;
use crate::error::{Error, Result};
use crate::linalg::svd::{dense_leading_left, leading_eigenvectors, sketched_svd_op, truncated_svd_op};
use crate::linalg::svd::LinearOperator;
use crate::linalg::tensor::{mode_product, DenseTensor3, FiberTensor, Mode, Unfolding};

pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Accuracy requested from the inner truncated SVDs.
const SVD_TOL: f64 = 1e-12;
/// Subspace-iteration rounds for the initialization, which only seeds the
/// sweeps.
const INIT_POWER_ITERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HooiOptions {
    pub max_iters: usize,
    /// Stop once the fit improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for HooiOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerFactors {
    pub core: DenseTensor3,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub ranks: (usize, usize, usize),
    pub fit: f64,
    /// Fit after initialization followed by the fit after each sweep.
    pub fit_history: Vec<f64>,
}

/// Snapshot handed to a [`hooi_observed`] callback after initialization
/// (`iteration == 0`) and after every sweep.
pub struct Sweep<'a> {
    pub iteration: usize,
    pub u: &'a DMatrix<f64>,
    pub v: &'a DMatrix<f64>,
    pub w: &'a DMatrix<f64>,
    pub fit: f64,
}

pub fn hooi(
    t: &SparseTensor3,
    ranks: (usize, usize, usize),
    rating_scaler: Option<&DMatrix<f64>>,
    opts: HooiOptions,
) -> Result<TuckerFactors> {
    let x = FiberTensor::from_sparse(t, None, rating_scaler)?;
    hooi_fibers(&x, ranks, opts, |_| {})
}

pub fn hooi_observed(
    x: &FiberTensor,
    ranks: (usize, usize, usize),
    opts: HooiOptions,
    observe: impl FnMut(&Sweep<'_>),
) -> Result<TuckerFactors> {
    hooi_fibers(x, ranks, opts, observe)
}

fn check_ranks(dims: [usize; 3], ranks: (usize, usize, usize)) -> Result<()> {
    for (r, d) in [ranks.0, ranks.1, ranks.2].into_iter().zip(dims) {
        if r == 0 || r > d {
            return Err(Error::RankOutOfRange { rank: r, max: d });
        }
    }
    Ok(())
}

/// Residuals this small relative to `‖X‖²` are recomputed exactly, since the
/// norm identity cancels catastrophically there.
const NEAR_EXACT: f64 = 1e-6;

fn fit_from_residual(x_norm_sq: f64, recon_norm_sq: f64, residual_sq: f64) -> f64 {
    if x_norm_sq == 0.0 {
        return if recon_norm_sq == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - residual_sq.max(0.0).sqrt() / x_norm_sq.sqrt()
}

/// `‖X - G ×₁ U ×₂ V ×₃ W‖²` summed one user slice at a time.
fn exact_residual_sq(x: &FiberTensor, core: &DenseTensor3, u: &DMatrix<f64>, v: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let [r1, r2, r3] = core.dims;
    let mut total = 0.0;
    let mut f = 0;
    for i in 0..x.dims[0] {
        let s = DMatrix::from_fn(r2, r3, |b, c| (0..r1).map(|a| u[(i, a)] * core.get(a, b, c)).sum());
        let mut slice = v * s * w.transpose();
        while f < x.n_fibers() && x.coord(f).0 == i {
            let j = x.coord(f).1;
            for (k, &val) in x.fiber(f).iter().enumerate() {
                slice[(j, k)] -= val;
            }
            f += 1;
        }
        total += slice.norm_squared();
    }
    total
}

fn projected_fit(x: &FiberTensor, x_norm_sq: f64, core: &DenseTensor3, u: &DMatrix<f64>, v: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let core_sq = core.norm_sq();
    let mut residual = x_norm_sq - core_sq;
    if residual <= NEAR_EXACT * x_norm_sq {
        residual = exact_residual_sq(x, core, u, v, w);
    }
    fit_from_residual(x_norm_sq, core_sq, residual)
}

/// Unfoldings at most this wide are decomposed exactly.
const EXACT_COLS: usize = 512;

/// Leading left singular vectors of a dense unfolding.
fn leading_left(m: &DMatrix<f64>, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    if rank > m.ncols() || m.ncols() <= EXACT_COLS {
        // Also covers fewer columns than the requested rank, where the Gram
        // eigenvectors pad the range with zero-weight directions.
        return dense_leading_left(m, rank);
    }
    Ok(truncated_svd_op(m, rank, seed, SVD_TOL)?.u)
}

/// Leading left singular vectors of a sparse unfolding, from its Gram
/// matrix when the mode is short enough.
fn init_factor(op: &Unfolding<'_>, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    let rows = op.nrows();
    if rows <= EXACT_COLS {
        let g = op.apply(&op.apply_t(&DMatrix::identity(rows, rows)));
        return leading_eigenvectors(&((&g + g.transpose()) * 0.5), rank);
    }
    Ok(sketched_svd_op(op, rank, seed, INIT_POWER_ITERS)?.u)
}

fn hooi_fibers(
    x: &FiberTensor,
    ranks: (usize, usize, usize),
    opts: HooiOptions,
    mut observe: impl FnMut(&Sweep<'_>),
) -> Result<TuckerFactors> {
    check_ranks(x.dims, ranks)?;
    let (r1, r2, r3) = ranks;
    let x_norm_sq = x.norm_sq();
    let seed_for = |iter: usize, mode: u64| opts.seed.wrapping_add(iter as u64 * 3 + mode);

    // HOSVD initialization.
    let mut u = init_factor(&x.unfolding(Mode::One), r1, seed_for(0, 0))?;
    let mut v = init_factor(&x.unfolding(Mode::Two), r2, seed_for(0, 1))?;
    let mut w = leading_eigenvectors(&x.mode3_gram(), r3)?;

    let core_of = |u: &DMatrix<f64>, v: &DMatrix<f64>, w: &DMatrix<f64>| -> Result<DenseTensor3> {
        mode_product(&x.contract_users_items(u, v), &w.transpose(), Mode::Three)
    };
    let mut core = core_of(&u, &v, &w)?;
    let mut fit = projected_fit(x, x_norm_sq, &core, &u, &v, &w);
    if !fit.is_finite() {
        return Err(Error::NonFinite("HOOI fit after initialization".to_string()));
    }
    let mut fit_history = vec![fit];
    observe(&Sweep { iteration: 0, u: &u, v: &v, w: &w, fit });

    for iter in 1..=opts.max_iters {
        u = leading_left(&x.contract_items_ratings(&v, &w), r1, seed_for(iter, 0))?;
        v = leading_left(&x.contract_users_ratings(&u, &w), r2, seed_for(iter, 1))?;
        let z = x.contract_users_items(&u, &v);
        w = leading_left(&z.unfold(Mode::Three), r3, seed_for(iter, 2))?;
        core = mode_product(&z, &w.transpose(), Mode::Three)?;

        let new_fit = projected_fit(x, x_norm_sq, &core, &u, &v, &w);
        if !new_fit.is_finite() {
            return Err(Error::NonFinite(format!("HOOI fit at sweep {iter}")));
        }
        fit_history.push(new_fit);
        observe(&Sweep { iteration: iter, u: &u, v: &v, w: &w, fit: new_fit });
        let improvement = new_fit - fit;
        fit = new_fit;
        if improvement < opts.tol {
            break;
        }
    }

    Ok(TuckerFactors {
        core,
        u,
        v,
        w,
        ranks,
        fit,
        fit_history,
    })
}

/// `1 - ‖X - X̂‖ / ‖X‖` for the reconstruction `X̂ = G ×₁ U ×₂ V ×₃ W`,
/// evaluated without densifying `X`.
pub fn fit(t: &SparseTensor3, f: &TuckerFactors) -> Result<f64> {
    let x = FiberTensor::from_sparse(t, None, None)?;
    fit_fibers(&x, f)
}

pub fn fit_fibers(x: &FiberTensor, f: &TuckerFactors) -> Result<f64> {
    let [d1, d2, d3] = x.dims;
    if f.u.nrows() != d1 || f.v.nrows() != d2 || f.w.nrows() != d3 {
        return Err(Error::DimensionMismatch(format!(
            "factors ({}, {}, {}) rows do not match tensor {:?}",
            f.u.nrows(),
            f.v.nrows(),
            f.w.nrows(),
            x.dims
        )));
    }
    let projected = mode_product(&x.contract_users_items(&f.u, &f.v), &f.w.transpose(), Mode::Three)?;
    if projected.dims != f.core.dims {
        return Err(Error::DimensionMismatch("core does not match factor ranks".to_string()));
    }
    let gram = |m: &DMatrix<f64>| m.tr_mul(m);
    let weighted = mode_product(
        &mode_product(&mode_product(&f.core, &gram(&f.u), Mode::One)?, &gram(&f.v), Mode::Two)?,
        &gram(&f.w),
        Mode::Three,
    )?;
    let recon_sq = f.core.dot(&weighted);
    let x_sq = x.norm_sq();
    if x_sq == 0.0 {
        return Ok(fit_from_residual(x_sq, recon_sq, 0.0));
    }
    let mut err_sq = x_sq - 2.0 * projected.dot(&f.core) + recon_sq;
    if err_sq <= NEAR_EXACT * x_sq {
        err_sq = exact_residual_sq(x, &f.core, &f.u, &f.v, &f.w);
    }
    Ok(fit_from_residual(x_sq, recon_sq, err_sq))
}

impl TuckerFactors {
    /// Dense `G ×₁ U ×₂ V ×₃ W`.
    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        mode_product(
            &mode_product(&mode_product(&self.core, &self.u, Mode::One)?, &self.v, Mode::Two)?,
            &self.w,
            Mode::Three,
        )
    }
}

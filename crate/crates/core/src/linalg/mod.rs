//! Truncated SVD, tensor mode products and Tucker decomposition.

pub mod hooi;
pub mod svd;
pub mod tensor;

pub use hooi::{fit, hooi, hooi_observed, HooiOptions, Sweep, TuckerFactors};
pub use svd::{truncated_svd, truncated_svd_op, LinearOperator, SparseMatrix, SvdResult};
pub use tensor::{mode_product, sparse_mode_product, DenseTensor3, FiberTensor, Mode};

//! Dense matrices, the Jacobi SVD / pseudoinverse, and seeded randomness.

mod matrix;
mod rng;
mod svd;

pub use matrix::Matrix;
pub use rng::{derive_seed, gaussian, Rng};
pub use svd::{pinv, pinv_with_rank, svd, Svd, DEFAULT_PINV_TOL, MAX_SWEEPS};

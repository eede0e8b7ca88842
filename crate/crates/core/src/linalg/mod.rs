//! Dense linear algebra and seeded randomness shared by the rest of the crate.

mod eigen;
mod matrix;
mod prng;

pub use eigen::{regularized_solve, sym_eigen, SymEigen, MAX_SWEEPS, OFF_DIAGONAL_TOL};
pub use matrix::{dot, gram_of_columns, hadamard, matmul, Matrix};
pub use prng::Prng;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is not square: {0:?}")]
    NotSquare((usize, usize)),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("empty matrix")]
    Empty,
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    NoConvergence { sweeps: usize, off_diagonal: f64 },
    #[error("factorization failed at pivot {pivot} (value {value:e}); matrix is indefinite beyond the jitter")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("jitter must be finite and non-negative, got {0}")]
    InvalidJitter(f64),
}

/// Sample mean and standard error of the mean (infinite below two samples).
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

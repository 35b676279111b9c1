//! Structure-exploiting linear algebra for the semi-banded systems solved in
//! the ADMM iteration: block-diagonal Cholesky, banded Cholesky with
//! forward-backward substitution, and low-rank Woodbury corrections layered
//! on top of either.

mod banded;
mod block_diag;
mod dense;
mod woodbury;

pub use banded::{BandedCholesky, BandedMatrix};
pub use block_diag::{BlockDiagonal, BlockDiagonalChol};
pub use dense::{LuFactors, RowMatrix};
pub use woodbury::WoodburySolver;

use thiserror::Error;

/// Relative pivot tolerance: a Cholesky pivot is rejected when it falls at or
/// below this fraction of the largest diagonal entry of the matrix being
/// factored.
pub const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("block {block} is not positive definite (pivot {pivot:.3e} at local index {index})")]
    NotPositiveDefinite {
        block: usize,
        index: usize,
        pivot: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("capacitance matrix of the low-rank correction is singular")]
    SingularCapacitance,
}

/// Common interface of the factored structures so the Woodbury layer can wrap
/// either a block-diagonal or a banded Cholesky factor.
pub trait FactoredSolver {
    fn dim(&self) -> usize;

    /// Overwrites `x` with `M⁻¹ x` for the factored matrix `M`.
    fn solve_in_place(&self, x: &mut [f64]);

    /// Checked, allocating variant.
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if rhs.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }
}

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

use super::{FactoredSolver, LinalgError, PIVOT_RTOL};
use nalgebra::DMatrix;

/// Block-diagonal symmetric matrix, stored as a list of dense square blocks.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<DMatrix<f64>>,
    dim: usize,
}

impl BlockDiagonal {
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self, LinalgError> {
        let mut dim = 0;
        for (idx, b) in blocks.iter().enumerate() {
            if b.nrows() != b.ncols() {
                return Err(LinalgError::DimensionMismatch {
                    expected: b.nrows(),
                    got: b.ncols(),
                });
            }
            let sym_err = (b - b.transpose()).amax();
            if sym_err > 1e-10 * (1.0 + b.amax()) {
                return Err(LinalgError::NotPositiveDefinite {
                    block: idx,
                    index: 0,
                    pivot: f64::NAN,
                });
            }
            dim += b.nrows();
        }
        Ok(Self { blocks, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Per-block Cholesky factorization. Fails with the index of the first
    /// block whose pivot falls below the relative tolerance.
    pub fn factor(&self) -> Result<BlockDiagonalChol, LinalgError> {
        let mut factors = Vec::with_capacity(self.blocks.len());
        for (idx, block) in self.blocks.iter().enumerate() {
            factors.push(chol_lower(block, idx)?);
        }
        Ok(BlockDiagonalChol {
            factors,
            dim: self.dim,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut off = 0;
        for b in &self.blocks {
            let d = b.nrows();
            m.view_mut((off, off), (d, d)).copy_from(b);
            off += d;
        }
        m
    }
}

/// Lower Cholesky factor of one block, row-major.
#[derive(Debug, Clone)]
struct CholBlock {
    dim: usize,
    lower: Vec<f64>,
}

fn chol_lower(block: &DMatrix<f64>, block_idx: usize) -> Result<CholBlock, LinalgError> {
    let n = block.nrows();
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(block[(i, i)].abs()));
    let tol = PIVOT_RTOL * max_diag;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = block[(i, j)];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= tol {
                    return Err(LinalgError::NotPositiveDefinite {
                        block: block_idx,
                        index: i,
                        pivot: sum,
                    });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(CholBlock { dim: n, lower: l })
}

/// Factored block-diagonal matrix; immutable after construction and safe to
/// share across threads.
#[derive(Debug, Clone)]
pub struct BlockDiagonalChol {
    factors: Vec<CholBlock>,
    dim: usize,
}

impl BlockDiagonalChol {
    /// Dense inverse of one block, used when assembling `G P⁻¹ Gᵀ` at build
    /// time.
    pub fn block_inverse(&self, idx: usize) -> DMatrix<f64> {
        let blk = &self.factors[idx];
        let n = blk.dim;
        let mut inv = DMatrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.fill(0.0);
            col[j] = 1.0;
            solve_block(blk, &mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.dim).collect()
    }
}

fn solve_block(blk: &CholBlock, x: &mut [f64]) {
    let n = blk.dim;
    let l = &blk.lower;
    for i in 0..n {
        let mut acc = x[i];
        for k in 0..i {
            acc -= l[i * n + k] * x[k];
        }
        x[i] = acc / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in i + 1..n {
            acc -= l[k * n + i] * x[k];
        }
        x[i] = acc / l[i * n + i];
    }
}

impl FactoredSolver for BlockDiagonalChol {
    fn dim(&self) -> usize {
        self.dim
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let mut off = 0;
        for blk in &self.factors {
            solve_block(blk, &mut x[off..off + blk.dim]);
            off += blk.dim;
        }
    }
}

use super::{FactoredSolver, LinalgError, LuFactors};
use nalgebra::DMatrix;

/// Solver for a semi-banded matrix `M = B + U Vᵀ`, where `B` is an already
/// factored structured part (block-diagonal or banded Cholesky) and `U Vᵀ` a
/// low-rank correction. Solutions use the Woodbury identity
///
/// ```text
/// M⁻¹ r = B⁻¹r − B⁻¹U (I + Vᵀ B⁻¹ U)⁻¹ Vᵀ B⁻¹ r
/// ```
///
/// `B⁻¹U` and the LU factors of the capacitance `I + Vᵀ B⁻¹ U` are cached at
/// construction, so one application costs a single structured solve plus two
/// skinny matrix-vector products.
#[derive(Debug, Clone)]
pub struct WoodburySolver<S: FactoredSolver> {
    base: S,
    rank: usize,
    /// B⁻¹U, column-major (each column contiguous).
    base_inv_u: Vec<f64>,
    /// V, column-major.
    v: Vec<f64>,
    capacitance: Option<LuFactors>,
}

impl<S: FactoredSolver> WoodburySolver<S> {
    /// Wraps `base` with the correction `U Vᵀ`. Passing empty matrices (zero
    /// columns) yields a plain pass-through to the structured solve.
    pub fn new(base: S, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let dim = base.dim();
        if u.ncols() != v.ncols() {
            return Err(LinalgError::DimensionMismatch {
                expected: u.ncols(),
                got: v.ncols(),
            });
        }
        let rank = u.ncols();
        if rank > 0 && (u.nrows() != dim || v.nrows() != dim) {
            return Err(LinalgError::DimensionMismatch {
                expected: dim,
                got: u.nrows().max(v.nrows()),
            });
        }

        let mut base_inv_u = vec![0.0; dim * rank];
        for c in 0..rank {
            let col = &mut base_inv_u[c * dim..(c + 1) * dim];
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = u[(i, c)];
            }
            base.solve_in_place(col);
        }

        let mut v_flat = vec![0.0; dim * rank];
        for c in 0..rank {
            for i in 0..dim {
                v_flat[c * dim + i] = v[(i, c)];
            }
        }

        // capacitance = I + Vᵀ B⁻¹ U
        let capacitance = if rank == 0 {
            None
        } else {
            let mut cap = vec![0.0; rank * rank];
            for i in 0..rank {
                for j in 0..rank {
                    let vi = &v_flat[i * dim..(i + 1) * dim];
                    let uj = &base_inv_u[j * dim..(j + 1) * dim];
                    let mut acc = if i == j { 1.0 } else { 0.0 };
                    for (a, b) in vi.iter().zip(uj.iter()) {
                        acc += a * b;
                    }
                    cap[i * rank + j] = acc;
                }
            }
            Some(LuFactors::factor(cap, rank)?)
        };

        Ok(Self {
            base,
            rank,
            base_inv_u,
            v: v_flat,
            capacitance,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn base(&self) -> &S {
        &self.base
    }

    /// Overwrites `x` with `M⁻¹ x`. `scratch` must hold at least `rank`
    /// elements; it is the only working memory needed, keeping repeated
    /// solves allocation-free.
    pub fn solve_in_place_with(&self, x: &mut [f64], scratch: &mut [f64]) {
        debug_assert_eq!(x.len(), self.base.dim());
        self.base.solve_in_place(x);
        let Some(cap) = &self.capacitance else {
            return;
        };
        let dim = x.len();
        let t = &mut scratch[..self.rank];
        for (c, tc) in t.iter_mut().enumerate() {
            let vc = &self.v[c * dim..(c + 1) * dim];
            let mut acc = 0.0;
            for (a, b) in vc.iter().zip(x.iter()) {
                acc += a * b;
            }
            *tc = acc;
        }
        cap.solve_in_place(t);
        for (c, tc) in t.iter().enumerate() {
            let uc = &self.base_inv_u[c * dim..(c + 1) * dim];
            for (xi, ui) in x.iter_mut().zip(uc.iter()) {
                *xi -= ui * tc;
            }
        }
    }
}

impl<S: FactoredSolver> FactoredSolver for WoodburySolver<S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let mut scratch = vec![0.0; self.rank];
        self.solve_in_place_with(x, &mut scratch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BlockDiagonal;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn identity_chol(n: usize) -> crate::linalg::BlockDiagonalChol {
        BlockDiagonal::from_blocks(vec![DMatrix::identity(n, n)])
            .unwrap()
            .factor()
            .unwrap()
    }

    #[test]
    fn zero_rank_is_plain_base_solve() {
        let base = identity_chol(3);
        let u = DMatrix::<f64>::zeros(3, 0);
        let v = DMatrix::<f64>::zeros(3, 0);
        let w = WoodburySolver::new(base, &u, &v).unwrap();
        let x = w.solve(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rank_one_identity_correction() {
        // (I + e1 e1ᵀ) s = e1 has the solution e1 / 2.
        let base = identity_chol(3);
        let mut u = DMatrix::<f64>::zeros(3, 1);
        u[(0, 0)] = 1.0;
        let v = u.clone();
        let w = WoodburySolver::new(base, &u, &v).unwrap();
        let x = w.solve(&[1.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn random_20_dim_matches_dense_lu() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 20;
        let rank = 4;
        let blocks: Vec<DMatrix<f64>> = (0..4)
            .map(|_| {
                let m = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
                &m * m.transpose() + DMatrix::identity(5, 5) * 2.0
            })
            .collect();
        let bd = BlockDiagonal::from_blocks(blocks).unwrap();
        let dense_base = bd.to_dense();
        let u = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        let dense = &dense_base + &u * v.transpose();

        let w = WoodburySolver::new(bd.factor().unwrap(), &u, &v).unwrap();
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = w.solve(&rhs).unwrap();
        let oracle = dense.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let err = x
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(err / oracle.amax() < 1e-9, "relative error {err}");
    }

    #[test]
    fn singular_capacitance_is_reported() {
        // I + vuᵀ with uᵀv = -1 makes the correction annihilate the base.
        let base = identity_chol(2);
        let mut u = DMatrix::<f64>::zeros(2, 1);
        u[(0, 0)] = 1.0;
        let mut v = DMatrix::<f64>::zeros(2, 1);
        v[(0, 0)] = -1.0;
        assert!(matches!(
            WoodburySolver::new(base, &u, &v),
            Err(LinalgError::SingularCapacitance)
        ));
    }
}

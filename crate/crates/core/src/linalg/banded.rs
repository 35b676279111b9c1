use super::{FactoredSolver, LinalgError, PIVOT_RTOL};
use nalgebra::DMatrix;

/// Symmetric banded matrix, storing the lower triangle row-major by
/// diagonals: row `i` keeps the entries for columns `i-bandwidth ..= i` in a
/// contiguous slot of width `bandwidth + 1`, left-padded with zeros near the
/// top rows. This layout gives sequential access in forward-backward
/// substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    dim: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        Self {
            dim,
            bandwidth,
            data: vec![0.0; dim * (bandwidth + 1)],
        }
    }

    /// Extracts the lower band of a dense symmetric matrix. Entries outside
    /// the declared bandwidth are ignored.
    pub fn from_dense(m: &DMatrix<f64>, bandwidth: usize) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let dim = m.nrows();
        let mut band = Self::zeros(dim, bandwidth);
        for i in 0..dim {
            for j in i.saturating_sub(bandwidth)..=i {
                band.set(i, j, m[(i, j)]);
            }
        }
        Ok(band)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + (j + self.bandwidth - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if j > i { (j, i) } else { (i, j) };
        if r - c > self.bandwidth {
            0.0
        } else {
            self.data[self.slot(r, c)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let idx = self.slot(i, j);
        self.data[idx] = value;
    }

    /// Banded Cholesky factorization. The factor inherits the band: no fill
    /// is created outside the declared bandwidth.
    pub fn factor(&self) -> Result<BandedCholesky, LinalgError> {
        let n = self.dim;
        let bw = self.bandwidth;
        let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(self.get(i, i).abs()));
        let tol = PIVOT_RTOL * max_diag;
        let mut l = BandedMatrix::zeros(n, bw);
        for j in 0..n {
            for i in j..(j + bw + 1).min(n) {
                let mut sum = self.get(i, j);
                let k0 = i.saturating_sub(bw).max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= l.data[l.slot(i, k)] * l.data[l.slot(j, k)];
                }
                if i == j {
                    if sum <= tol {
                        return Err(LinalgError::NotPositiveDefinite {
                            block: 0,
                            index: i,
                            pivot: sum,
                        });
                    }
                    let idx = l.slot(j, j);
                    l.data[idx] = sum.sqrt();
                } else {
                    let diag = l.data[l.slot(j, j)];
                    let idx = l.slot(i, j);
                    l.data[idx] = sum / diag;
                }
            }
        }
        Ok(BandedCholesky { lower: l })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in i.saturating_sub(self.bandwidth)..=i {
                let v = self.get(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Lower banded Cholesky factor with forward-backward substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCholesky {
    lower: BandedMatrix,
}

impl BandedCholesky {
    pub fn bandwidth(&self) -> usize {
        self.lower.bandwidth
    }

    /// Lower factor as a dense matrix (test and inspection helper).
    pub fn lower_dense(&self) -> DMatrix<f64> {
        let n = self.lower.dim;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(self.lower.bandwidth)..=i {
                m[(i, j)] = self.lower.get(i, j);
            }
        }
        m
    }
}

impl FactoredSolver for BandedCholesky {
    fn dim(&self) -> usize {
        self.lower.dim
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.lower.dim;
        let bw = self.lower.bandwidth;
        debug_assert_eq!(x.len(), n);
        let l = &self.lower;
        for i in 0..n {
            let mut acc = x[i];
            for k in i.saturating_sub(bw)..i {
                acc -= l.data[l.slot(i, k)] * x[k];
            }
            x[i] = acc / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                acc -= l.data[l.slot(k, i)] * x[k];
            }
            x[i] = acc / l.data[l.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::FactoredSolver;
    use nalgebra::{DMatrix, DVector};

    fn tridiag(n: usize, diag: f64, off: f64) -> BandedMatrix {
        let mut m = BandedMatrix::zeros(n, 1);
        for i in 0..n {
            m.set(i, i, diag);
            if i > 0 {
                m.set(i, i - 1, off);
            }
        }
        m
    }

    #[test]
    fn identity_solve_is_identity() {
        let mut m = BandedMatrix::zeros(4, 0);
        for i in 0..4 {
            m.set(i, i, 1.0);
        }
        let f = m.factor().unwrap();
        let mut x = vec![3.0, -1.0, 0.5, 2.0];
        let expect = x.clone();
        f.solve_in_place(&mut x);
        assert_eq!(x, expect);
    }

    #[test]
    fn two_by_two_tridiagonal_hand_solve() {
        // [[2,1],[1,2]] x = (1,1) has the solution (1/3, 1/3).
        let m = tridiag(2, 2.0, 1.0);
        let f = m.factor().unwrap();
        let x = f.solve(&[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn factor_reconstructs_source_within_tolerance() {
        let n = 30;
        let m = tridiag(n, 4.0, -1.0);
        let f = m.factor().unwrap();
        let l = f.lower_dense();
        let rebuilt = &l * l.transpose();
        let dense = m.to_dense();
        let err = (&rebuilt - &dense).norm() / dense.norm();
        assert!(err < 1e-10, "relative reconstruction error {err}");
    }

    #[test]
    fn no_fill_outside_band() {
        let n = 12;
        let bw = 3;
        let mut m = BandedMatrix::zeros(n, bw);
        for i in 0..n {
            m.set(i, i, 6.0);
            for j in i.saturating_sub(bw)..i {
                m.set(i, j, 0.3 * ((i + j) % 3) as f64 - 0.4);
            }
        }
        let f = m.factor().unwrap();
        let l = f.lower_dense();
        for i in 0..n {
            for j in 0..n {
                if j > i || i - j > bw {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn solve_matches_dense_lu() {
        let n = 25;
        let bw = 4;
        let mut m = BandedMatrix::zeros(n, bw);
        for i in 0..n {
            m.set(i, i, 10.0 + (i % 5) as f64);
            for j in i.saturating_sub(bw)..i {
                m.set(i, j, ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
            }
        }
        let f = m.factor().unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&rhs).unwrap();
        let oracle = m
            .to_dense()
            .lu()
            .solve(&DVector::from_column_slice(&rhs))
            .unwrap();
        let num: f64 = x
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(num / oracle.norm() < 1e-9);
    }

    #[test]
    fn deterministic_across_repeated_calls() {
        let m = tridiag(40, 5.0, -1.3);
        let f1 = m.factor().unwrap();
        let f2 = m.factor().unwrap();
        assert_eq!(f1, f2);
        let rhs: Vec<f64> = (0..40).map(|i| ((i * i) % 17) as f64 - 8.0).collect();
        let x1 = f1.solve(&rhs).unwrap();
        let x2 = f2.solve(&rhs).unwrap();
        for (a, b) in x1.iter().zip(x2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut m = BandedMatrix::zeros(3, 1);
        m.set(0, 0, 1.0);
        m.set(1, 0, 4.0);
        m.set(1, 1, 1.0);
        m.set(2, 2, 1.0);
        assert!(matches!(
            m.factor(),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn from_dense_roundtrip() {
        let d = DMatrix::from_fn(6, 6, |i, j| {
            if i.abs_diff(j) <= 2 {
                1.0 / (1.0 + (i + j) as f64) + if i == j { 4.0 } else { 0.0 }
            } else {
                0.0
            }
        });
        let band = BandedMatrix::from_dense(&d, 2).unwrap();
        assert_eq!(band.to_dense(), d);
    }
}

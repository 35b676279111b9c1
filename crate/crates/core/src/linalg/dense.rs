use super::LinalgError;
use nalgebra::DMatrix;

/// Small dense row-major matrix used on the solver hot path, where nalgebra's
/// dynamic matrices would allocate. Only the handful of kernels the ADMM
/// iteration needs are provided.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// y += M x
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *yi += acc;
        }
    }

    /// y -= M x
    #[inline]
    pub fn matvec_sub(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *yi -= acc;
        }
    }

    /// y += Mᵀ x
    #[inline]
    pub fn matvec_t_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (i, xi) in x.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (yj, a) in y.iter_mut().zip(row.iter()) {
                *yj += a * xi;
            }
        }
    }
}

/// Dense LU factorization with partial pivoting for the small capacitance
/// matrices of the Woodbury corrections (rank at most a few dozen).
#[derive(Debug, Clone)]
pub struct LuFactors {
    dim: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl LuFactors {
    /// Factors the row-major `dim x dim` matrix `a`. The singularity test is
    /// relative to the largest absolute entry of `a`.
    pub fn factor(mut a: Vec<f64>, dim: usize) -> Result<Self, LinalgError> {
        if a.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                got: a.len(),
            });
        }
        let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let tol = super::PIVOT_RTOL * scale.max(1.0);
        let mut pivots = vec![0usize; dim];
        for k in 0..dim {
            let mut max_row = k;
            let mut max_val = a[k * dim + k].abs();
            for r in k + 1..dim {
                let v = a[r * dim + k].abs();
                if v > max_val {
                    max_val = v;
                    max_row = r;
                }
            }
            if max_val <= tol {
                return Err(LinalgError::SingularCapacitance);
            }
            pivots[k] = max_row;
            if max_row != k {
                for j in 0..dim {
                    a.swap(k * dim + j, max_row * dim + j);
                }
            }
            let pivot = a[k * dim + k];
            for r in k + 1..dim {
                let factor = a[r * dim + k] / pivot;
                a[r * dim + k] = factor;
                for j in k + 1..dim {
                    a[r * dim + j] -= factor * a[k * dim + j];
                }
            }
        }
        Ok(Self {
            dim,
            data: a,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        for k in 0..n {
            x.swap(k, self.pivots[k]);
        }
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.data[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..n {
                acc -= self.data[k * n + j] * x[j];
            }
            x[k] = acc / self.data[k * n + k];
        }
    }

    /// Dense inverse, used at problem-build time only.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.dim;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.fill(0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

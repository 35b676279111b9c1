//! Prediction-model data: the discrete LTI model with disturbance input and
//! coupled-constraint maps, box constraints with back-off tightening, cost
//! weights with soft-constraint penalties, and the diagonal preconditioner.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("weight matrix {0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("scaling diagonal `{0}` has a nonpositive entry")]
    NonpositiveScaling(&'static str),
}

/// Discrete-time LTI prediction model
///
/// ```text
/// x⁺ = A x + B u + B_d d,    y = C x + d,    h = E x + F u
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelWarning {
    NotControllable,
    NotObservable,
}

impl LinearModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        bd: DMatrix<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        let check = |what, expected, got| {
            if expected != got {
                Err(ModelError::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("A columns", n, a.ncols())?;
        check("B rows", n, b.nrows())?;
        check("C columns", n, c.ncols())?;
        check("B_d rows", n, bd.nrows())?;
        check("B_d columns", c.nrows(), bd.ncols())?;
        check("E columns", n, e.ncols())?;
        check("F rows", e.nrows(), f.nrows())?;
        check("F columns", b.ncols(), f.ncols())?;
        Ok(Self { a, b, c, bd, e, f })
    }

    /// Model without coupled constraints (`n_h = 0`) and zero disturbance
    /// input.
    pub fn without_coupled(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        Self::new(
            a,
            b,
            c,
            DMatrix::zeros(n, p),
            DMatrix::zeros(0, n),
            DMatrix::zeros(0, m),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn coupled_dim(&self) -> usize {
        self.e.nrows()
    }

    /// Smallest horizon `k` for which `[B, AB, …, A^{k-1}B]` reaches full
    /// rank, or `None` when the pair is not controllable.
    pub fn controllability_index(&self) -> Option<usize> {
        let n = self.state_dim();
        let m = self.input_dim();
        if m == 0 {
            return None;
        }
        let mut reach = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            reach
                .view_mut((0, k * m), (n, m))
                .copy_from(&block);
            let r = reach.view((0, 0), (n, (k + 1) * m)).clone_owned();
            if numeric_rank(&r) == n {
                return Some(k + 1);
            }
            block = &self.a * block;
        }
        None
    }

    pub fn is_observable(&self) -> bool {
        // Observability of (A, C) is controllability of (Aᵀ, Cᵀ).
        let dual = LinearModel::without_coupled(
            self.a.transpose(),
            self.c.transpose(),
            DMatrix::zeros(0, self.state_dim()),
        )
        .expect("dual dimensions are consistent by construction");
        dual.controllability_index().is_some()
    }

    pub fn warnings(&self) -> Vec<ModelWarning> {
        let mut w = Vec::new();
        if self.controllability_index().is_none() {
            w.push(ModelWarning::NotControllable);
        }
        if !self.is_observable() {
            w.push(ModelWarning::NotObservable);
        }
        w
    }
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count()
}

/// Box constraints on states, inputs and coupled rows, together with the
/// nonnegative back-off vectors that tighten the state and coupled bounds.
/// Input bounds carry no back-off: they are actuator limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub state_lower: DVector<f64>,
    pub state_upper: DVector<f64>,
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
    pub coupled_lower: DVector<f64>,
    pub coupled_upper: DVector<f64>,
    pub backoff_state_lower: DVector<f64>,
    pub backoff_state_upper: DVector<f64>,
    pub backoff_coupled_lower: DVector<f64>,
    pub backoff_coupled_upper: DVector<f64>,
}

/// Stand-in for "unbounded" box edges. Large enough to never activate, small
/// enough to stay well inside f64 range after scaling.
pub const UNBOUNDED: f64 = 1e12;

impl ConstraintSet {
    pub fn new(
        state_lower: DVector<f64>,
        state_upper: DVector<f64>,
        input_lower: DVector<f64>,
        input_upper: DVector<f64>,
        coupled_lower: DVector<f64>,
        coupled_upper: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let n = state_lower.len();
        let nh = coupled_lower.len();
        let set = Self {
            state_lower,
            state_upper,
            input_lower,
            input_upper,
            coupled_lower,
            coupled_upper,
            backoff_state_lower: DVector::zeros(n),
            backoff_state_upper: DVector::zeros(n),
            backoff_coupled_lower: DVector::zeros(nh),
            backoff_coupled_upper: DVector::zeros(nh),
        };
        set.validate()?;
        Ok(set)
    }

    /// All-free constraint set of the given dimensions.
    pub fn unbounded(n: usize, m: usize, nh: usize) -> Self {
        let v = |len: usize, s: f64| DVector::from_element(len, s);
        Self::new(
            v(n, -UNBOUNDED),
            v(n, UNBOUNDED),
            v(m, -UNBOUNDED),
            v(m, UNBOUNDED),
            v(nh, -UNBOUNDED),
            v(nh, UNBOUNDED),
        )
        .expect("unbounded set is always valid")
    }

    pub fn with_backoff(
        mut self,
        state_lower: DVector<f64>,
        state_upper: DVector<f64>,
        coupled_lower: DVector<f64>,
        coupled_upper: DVector<f64>,
    ) -> Result<Self, ModelError> {
        self.backoff_state_lower = state_lower;
        self.backoff_state_upper = state_upper;
        self.backoff_coupled_lower = coupled_lower;
        self.backoff_coupled_upper = coupled_upper;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let pairs: [(&str, &DVector<f64>, &DVector<f64>, Option<(&DVector<f64>, &DVector<f64>)>);
            3] = [
            (
                "state",
                &self.state_lower,
                &self.state_upper,
                Some((&self.backoff_state_lower, &self.backoff_state_upper)),
            ),
            ("input", &self.input_lower, &self.input_upper, None),
            (
                "coupled",
                &self.coupled_lower,
                &self.coupled_upper,
                Some((&self.backoff_coupled_lower, &self.backoff_coupled_upper)),
            ),
        ];
        for (what, lo, hi, backoff) in pairs {
            if lo.len() != hi.len() {
                return Err(ModelError::DimensionMismatch {
                    what: "bound vectors",
                    expected: lo.len(),
                    got: hi.len(),
                });
            }
            for i in 0..lo.len() {
                let (eta_lo, eta_hi) = match backoff {
                    Some((bl, bh)) => (bl[i], bh[i]),
                    None => (0.0, 0.0),
                };
                if eta_lo < 0.0 || eta_hi < 0.0 {
                    return Err(ModelError::InvalidBounds(format!(
                        "{what} back-off component {i} is negative"
                    )));
                }
                if lo[i] + eta_lo >= hi[i] - eta_hi {
                    return Err(ModelError::InvalidBounds(format!(
                        "{what} bounds cross after back-off at component {i}: \
                         [{}, {}]",
                        lo[i] + eta_lo,
                        hi[i] - eta_hi
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective (tightened) state bounds.
    pub fn tightened_state(&self) -> (DVector<f64>, DVector<f64>) {
        (
            &self.state_lower + &self.backoff_state_lower,
            &self.state_upper - &self.backoff_state_upper,
        )
    }

    /// Effective (tightened) coupled bounds.
    pub fn tightened_coupled(&self) -> (DVector<f64>, DVector<f64>) {
        (
            &self.coupled_lower + &self.backoff_coupled_lower,
            &self.coupled_upper - &self.backoff_coupled_upper,
        )
    }
}

/// Soft-constraint penalty weights, aligned at build time with the stacked
/// soft variables `(h₀, x₁, u₁, h₁, …, x_N₋₁, u_N₋₁, h_N₋₁, x_s, u_s, h_s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SoftWeights {
    /// One coefficient broadcast over every soft component.
    Uniform(f64),
    /// One coefficient per state/input/coupled component, repeated stagewise.
    Stagewise {
        state: DVector<f64>,
        input: DVector<f64>,
        coupled: DVector<f64>,
    },
    /// Fully explicit vector over the stacked soft variables.
    Full(DVector<f64>),
}

impl SoftWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match self {
            SoftWeights::Uniform(c) => *c > 0.0,
            SoftWeights::Stagewise {
                state,
                input,
                coupled,
            } => state
                .iter()
                .chain(input.iter())
                .chain(coupled.iter())
                .all(|&v| v > 0.0),
            SoftWeights::Full(v) => v.iter().all(|&v| v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidBounds(
                "soft-penalty weights must be strictly positive".into(),
            ))
        }
    }

    /// Expands to one coefficient per stacked soft component for horizon `n_steps`.
    pub fn resolve(
        &self,
        n: usize,
        m: usize,
        nh: usize,
        n_steps: usize,
    ) -> Result<DVector<f64>, ModelError> {
        let total = nh + n_steps * (n + m + nh);
        match self {
            SoftWeights::Uniform(c) => Ok(DVector::from_element(total, *c)),
            SoftWeights::Stagewise {
                state,
                input,
                coupled,
            } => {
                if state.len() != n || input.len() != m || coupled.len() != nh {
                    return Err(ModelError::DimensionMismatch {
                        what: "stagewise soft weights",
                        expected: n + m + nh,
                        got: state.len() + input.len() + coupled.len(),
                    });
                }
                let mut out = DVector::zeros(total);
                let mut k = 0;
                for i in 0..nh {
                    out[k] = coupled[i];
                    k += 1;
                }
                for _ in 0..n_steps {
                    for i in 0..n {
                        out[k] = state[i];
                        k += 1;
                    }
                    for i in 0..m {
                        out[k] = input[i];
                        k += 1;
                    }
                    for i in 0..nh {
                        out[k] = coupled[i];
                        k += 1;
                    }
                }
                Ok(out)
            }
            SoftWeights::Full(v) => {
                if v.len() != total {
                    return Err(ModelError::DimensionMismatch {
                        what: "full soft weights",
                        expected: total,
                        got: v.len(),
                    });
                }
                Ok(v.clone())
            }
        }
    }
}

/// Quadratic cost weights: stage weights on state and input deviations from
/// the artificial reference, offset weights pulling the artificial reference
/// to the external one, and the soft-constraint penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub state: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub offset_state: DMatrix<f64>,
    pub offset_input: DMatrix<f64>,
    pub soft: SoftWeights,
}

impl CostWeights {
    pub fn new(
        state: DMatrix<f64>,
        input: DMatrix<f64>,
        offset_state: DMatrix<f64>,
        offset_input: DMatrix<f64>,
        soft: SoftWeights,
    ) -> Result<Self, ModelError> {
        for (name, m) in [
            ("state weight", &state),
            ("input weight", &input),
            ("offset state weight", &offset_state),
            ("offset input weight", &offset_input),
        ] {
            if !is_spd(m) {
                return Err(ModelError::NotPositiveDefinite(name));
            }
        }
        soft.validate()?;
        Ok(Self {
            state,
            input,
            offset_state,
            offset_input,
            soft,
        })
    }

    pub fn diagonal(
        state: &[f64],
        input: &[f64],
        offset_state: &[f64],
        offset_input: &[f64],
        soft: SoftWeights,
    ) -> Result<Self, ModelError> {
        let d = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(v));
        Self::new(
            d(state),
            d(input),
            d(offset_state),
            d(offset_input),
            soft,
        )
    }
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    if (m - m.transpose()).amax() > 1e-10 * (1.0 + m.amax()) {
        return false;
    }
    nalgebra::Cholesky::new(m.clone()).is_some()
}

/// Diagonal scaling of states, inputs and coupled-constraint rows used to
/// precondition the solver. All entries are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub coupled: DVector<f64>,
}

impl Preconditioner {
    pub fn new(
        state: DVector<f64>,
        input: DVector<f64>,
        coupled: DVector<f64>,
    ) -> Result<Self, ModelError> {
        for (name, v) in [("state", &state), ("input", &input), ("coupled", &coupled)] {
            if v.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
                return Err(ModelError::NonpositiveScaling(name));
            }
        }
        Ok(Self {
            state,
            input,
            coupled,
        })
    }

    pub fn identity(n: usize, m: usize, nh: usize) -> Self {
        Self {
            state: DVector::from_element(n, 1.0),
            input: DVector::from_element(m, 1.0),
            coupled: DVector::from_element(nh, 1.0),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            state: self.state.map(|s| 1.0 / s),
            input: self.input.map(|s| 1.0 / s),
            coupled: self.coupled.map(|s| 1.0 / s),
        }
    }

    pub fn scale_state(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.state)
    }

    pub fn unscale_state(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_div(&self.state)
    }

    pub fn scale_input(&self, u: &DVector<f64>) -> DVector<f64> {
        u.component_mul(&self.input)
    }

    pub fn unscale_input(&self, u: &DVector<f64>) -> DVector<f64> {
        u.component_div(&self.input)
    }
}

/// Applies the diagonal preconditioner, producing an equivalent problem in
/// scaled variables `x̃ = N_x x`, `ũ = N_u u` with coupled rows scaled by
/// `N_c`. Weights transform contragrediently and the soft penalties scale
/// per component, so the scaled problem has exactly the same minimizer in
/// original coordinates. Applying the inverse preconditioner undoes the
/// transformation.
pub fn precondition(
    model: &LinearModel,
    constraints: &ConstraintSet,
    weights: &CostWeights,
    scaling: &Preconditioner,
) -> Result<(LinearModel, ConstraintSet, CostWeights), ModelError> {
    let n = model.state_dim();
    let m = model.input_dim();
    let nh = model.coupled_dim();
    if scaling.state.len() != n || scaling.input.len() != m || scaling.coupled.len() != nh {
        return Err(ModelError::DimensionMismatch {
            what: "preconditioner diagonals",
            expected: n + m + nh,
            got: scaling.state.len() + scaling.input.len() + scaling.coupled.len(),
        });
    }
    let nx = DMatrix::from_diagonal(&scaling.state);
    let nx_inv = DMatrix::from_diagonal(&scaling.state.map(|s| 1.0 / s));
    let nu_inv = DMatrix::from_diagonal(&scaling.input.map(|s| 1.0 / s));
    let nc = DMatrix::from_diagonal(&scaling.coupled);

    let scaled_model = LinearModel {
        a: &nx * &model.a * &nx_inv,
        b: &nx * &model.b * &nu_inv,
        c: &model.c * &nx_inv,
        bd: &nx * &model.bd,
        e: &nc * &model.e * &nx_inv,
        f: &nc * &model.f * &nu_inv,
    };

    let sx = |v: &DVector<f64>| v.component_mul(&scaling.state);
    let su = |v: &DVector<f64>| v.component_mul(&scaling.input);
    let sc = |v: &DVector<f64>| v.component_mul(&scaling.coupled);
    let scaled_constraints = ConstraintSet {
        state_lower: sx(&constraints.state_lower),
        state_upper: sx(&constraints.state_upper),
        input_lower: su(&constraints.input_lower),
        input_upper: su(&constraints.input_upper),
        coupled_lower: sc(&constraints.coupled_lower),
        coupled_upper: sc(&constraints.coupled_upper),
        backoff_state_lower: sx(&constraints.backoff_state_lower),
        backoff_state_upper: sx(&constraints.backoff_state_upper),
        backoff_coupled_lower: sc(&constraints.backoff_coupled_lower),
        backoff_coupled_upper: sc(&constraints.backoff_coupled_upper),
    };
    scaled_constraints.validate()?;

    let soft = match &weights.soft {
        SoftWeights::Uniform(c) => SoftWeights::Stagewise {
            state: scaling.state.map(|s| c / s),
            input: scaling.input.map(|s| c / s),
            coupled: scaling.coupled.map(|s| c / s),
        },
        SoftWeights::Stagewise {
            state,
            input,
            coupled,
        } => SoftWeights::Stagewise {
            state: state.component_div(&scaling.state),
            input: input.component_div(&scaling.input),
            coupled: coupled.component_div(&scaling.coupled),
        },
        SoftWeights::Full(v) => {
            // Walk the stacked layout (h₀, then repeated x/u/h groups) and
            // divide each slot by its component's scale factor.
            if (v.len() < nh) || (v.len() - nh) % (n + m + nh) != 0 {
                return Err(ModelError::DimensionMismatch {
                    what: "full soft weights layout",
                    expected: nh,
                    got: v.len(),
                });
            }
            let mut out = v.clone();
            let mut k = 0;
            for i in 0..nh {
                out[k] /= scaling.coupled[i];
                k += 1;
            }
            while k < v.len() {
                for i in 0..n {
                    out[k] /= scaling.state[i];
                    k += 1;
                }
                for i in 0..m {
                    out[k] /= scaling.input[i];
                    k += 1;
                }
                for i in 0..nh {
                    out[k] /= scaling.coupled[i];
                    k += 1;
                }
            }
            SoftWeights::Full(out)
        }
    };
    let scaled_weights = CostWeights {
        state: &nx_inv * &weights.state * &nx_inv,
        input: &nu_inv * &weights.input * &nu_inv,
        offset_state: &nx_inv * &weights.offset_state * &nx_inv,
        offset_input: &nu_inv * &weights.offset_input * &nu_inv,
        soft,
    };

    Ok((scaled_model, scaled_constraints, scaled_weights))
}

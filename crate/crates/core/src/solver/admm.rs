use super::problem::{MpctProblem, VKind};
use super::SolverError;
use crate::linalg::inf_norm;
use nalgebra::DVector;

/// Exit tolerances and iteration limits. `iteration_budget` caps the number
/// of iterations performed by one call, so a long solve can be distributed
/// over several controller cycles and resumed; `None` means no per-call cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iterations: usize,
    pub iteration_budget: Option<usize>,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            eps_primal: 5e-3,
            eps_dual: 1e-3,
            max_iterations: 5000,
            iteration_budget: None,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.eps_primal > 0.0) || !(self.eps_dual > 0.0) {
            return Err(SolverError::InvalidSettings("tolerances must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidSettings(
                "max_iterations must be at least 1",
            ));
        }
        if self.iteration_budget == Some(0) {
            return Err(SolverError::InvalidSettings(
                "iteration_budget must be at least 1 when set",
            ));
        }
        Ok(())
    }
}

/// How a call to [`MpctProblem::run`] ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// The per-call iteration budget ran out; the state can be resumed.
    BudgetExhausted,
    /// The global iteration cap was hit without convergence.
    MaxIterations,
}

/// Mutable solver iterate, owned by exactly one solve sequence at a time.
/// Holds the ADMM variables, the per-solve right-hand data, and the scratch
/// buffers that keep the iteration allocation-free.
#[derive(Debug, Clone)]
pub struct AdmmState {
    z: Vec<f64>,
    v: Vec<f64>,
    v_prev: Vec<f64>,
    lambda: Vec<f64>,
    q: Vec<f64>,
    b: Vec<f64>,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    converged: bool,
    // scratch
    p_vec: Vec<f64>,
    xi: Vec<f64>,
    mu: Vec<f64>,
    tmp_z: Vec<f64>,
    dz: Vec<f64>,
    rank_scratch: Vec<f64>,
}

impl AdmmState {
    fn new(problem: &MpctProblem) -> Self {
        let dims = problem.dims();
        let rank = problem
            .p_solver
            .rank()
            .max(problem.w_solver.rank());
        Self {
            z: vec![0.0; dims.nz()],
            v: vec![0.0; dims.nv()],
            v_prev: vec![0.0; dims.nv()],
            lambda: vec![0.0; dims.nv()],
            q: vec![0.0; dims.nz()],
            b: vec![0.0; dims.mz()],
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            converged: false,
            p_vec: vec![0.0; dims.nz()],
            xi: vec![0.0; dims.nz()],
            mu: vec![0.0; dims.mz()],
            tmp_z: vec![0.0; dims.nz()],
            dz: vec![0.0; dims.nv()],
            rank_scratch: vec![0.0; rank],
        }
    }

    pub fn primal(&self) -> &[f64] {
        &self.z
    }

    pub fn split(&self) -> &[f64] {
        &self.v
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.lambda
    }

    pub fn equality_rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn linear_cost(&self) -> &[f64] {
        &self.q
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn primal_residual(&self) -> f64 {
        self.primal_residual
    }

    pub fn dual_residual(&self) -> f64 {
        self.dual_residual
    }

    pub fn converged(&self) -> bool {
        self.converged
    }
}

/// Solver output. The applied control, artificial reference and residuals
/// are reported in the caller's (unscaled) units; the raw iterate vectors
/// stay in solver units so they can seed the next warm start.
#[derive(Debug, Clone)]
pub struct Solution {
    /// First input of the plan, hard-clamped to the input box.
    pub control: Vec<f64>,
    /// Artificial steady-state reference `x_s`.
    pub reference_state: Vec<f64>,
    /// Artificial steady-input reference `u_s`.
    pub reference_input: Vec<f64>,
    /// Full primal iterate `z` (solver units).
    pub primal: Vec<f64>,
    /// Splitting iterate `v` (solver units).
    pub split: Vec<f64>,
    /// Dual iterate `λ` (solver units).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub status: SolveStatus,
}

/// Closed-form proximal operator of the scaled soft-box penalty: the unique
/// minimizer over `w` of
///
/// ```text
/// (ρ/2)(w − c)² + (β/2)·max(w − hi, lo − w, 0)
/// ```
///
/// Ties at the branch boundaries go to the saturated branches.
pub fn prox_soft_box(c: f64, lo: f64, hi: f64, beta: f64, rho: f64) -> Result<f64, SolverError> {
    if !(lo < hi) {
        return Err(SolverError::InvalidBounds("lower bound must be below upper"));
    }
    if !(beta > 0.0) {
        return Err(SolverError::InvalidBounds("penalty weight must be positive"));
    }
    if !(rho > 0.0) {
        return Err(SolverError::InvalidBounds("rho must be positive"));
    }
    Ok(prox_soft_box_unchecked(c, lo, hi, beta, rho))
}

#[inline]
pub(crate) fn prox_soft_box_unchecked(c: f64, lo: f64, hi: f64, beta: f64, rho: f64) -> f64 {
    let offset = beta / (2.0 * rho);
    if c + offset <= lo {
        c + offset
    } else if c < lo {
        lo
    } else if c <= hi {
        c
    } else if c - offset < hi {
        hi
    } else {
        c - offset
    }
}

/// Shifts a converged splitting/dual pair one stage forward to seed the
/// next sample time: every component moves `stage_size` positions towards
/// the front and the final stage is duplicated.
pub fn warm_start_shift(
    split: &[f64],
    multipliers: &[f64],
    stage_size: usize,
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    if stage_size == 0 || split.len() % stage_size != 0 {
        return Err(SolverError::DimensionMismatch {
            what: "warm-start stage size",
            expected: stage_size.max(1),
            got: split.len(),
        });
    }
    if multipliers.len() != split.len() {
        return Err(SolverError::DimensionMismatch {
            what: "warm-start vectors",
            expected: split.len(),
            got: multipliers.len(),
        });
    }
    let shift = |src: &[f64]| {
        let len = src.len();
        let mut out = vec![0.0; len];
        out[..len - stage_size].copy_from_slice(&src[stage_size..]);
        out[len - stage_size..].copy_from_slice(&src[len - stage_size..]);
        out
    };
    Ok((shift(split), shift(multipliers)))
}

impl MpctProblem {
    /// Prepares a solve: refreshes the right-hand data `q` and `b` for the
    /// current estimate, disturbance and reference, and initializes the
    /// iterate cold (zeros) or from the supplied warm pair.
    pub fn begin(
        &self,
        state_estimate: &DVector<f64>,
        disturbance: &DVector<f64>,
        reference_state: &DVector<f64>,
        reference_input: &DVector<f64>,
        warm: Option<(&[f64], &[f64])>,
    ) -> Result<AdmmState, SolverError> {
        let dims = self.dims();
        let check = |what, expected, got| {
            if expected != got {
                Err(SolverError::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("state estimate", dims.states, state_estimate.len())?;
        check("reference state", dims.states, reference_state.len())?;
        check("reference input", dims.inputs, reference_input.len())?;

        let mut st = AdmmState::new(self);
        let xh = self.scale_state_vec(state_estimate);
        let xr = self.scale_state_vec(reference_state);
        let ur = self.scale_input_vec(reference_input);
        self.refresh_linear_cost(&mut st.q, xr.as_slice(), ur.as_slice());
        self.refresh_equality_rhs(&mut st.b, xh.as_slice(), disturbance.as_slice());

        if let Some((v0, l0)) = warm {
            check("warm-start split vector", dims.nv(), v0.len())?;
            check("warm-start multipliers", dims.nv(), l0.len())?;
            st.v.copy_from_slice(v0);
            st.v_prev.copy_from_slice(v0);
            st.lambda.copy_from_slice(l0);
        }
        Ok(st)
    }

    /// One ADMM iteration: the structured equality-constrained QP step, the
    /// separable proximal step, and the dual update, followed by the
    /// residual evaluation.
    pub fn iterate(&self, st: &mut AdmmState) -> Result<(), SolverError> {
        let rho = self.rho();

        // p = q + Dᵀ(λ − ρ v)
        for i in 0..st.dz.len() {
            st.dz[i] = st.lambda[i] - rho * st.v[i];
        }
        self.apply_d_transpose(&st.dz, &mut st.p_vec);
        for i in 0..st.p_vec.len() {
            st.p_vec[i] += st.q[i];
        }

        // Three structured systems: P ξ = p, W μ = −(G ξ + b),
        // P z = −(Gᵀ μ + p).
        st.xi.copy_from_slice(&st.p_vec);
        self.p_solver
            .solve_in_place_with(&mut st.xi, &mut st.rank_scratch);

        self.apply_g(&st.xi, &mut st.mu);
        for i in 0..st.mu.len() {
            st.mu[i] = -(st.mu[i] + st.b[i]);
        }
        self.w_solver
            .solve_in_place_with(&mut st.mu, &mut st.rank_scratch);

        self.apply_g_transpose(&st.mu, &mut st.tmp_z);
        for i in 0..st.tmp_z.len() {
            st.z[i] = -(st.tmp_z[i] + st.p_vec[i]);
        }
        self.p_solver
            .solve_in_place_with(&mut st.z, &mut st.rank_scratch);

        // Separable proximal step on v, then the dual ascent on λ.
        self.apply_d(&st.z, &mut st.dz);
        std::mem::swap(&mut st.v, &mut st.v_prev);
        for j in 0..st.v.len() {
            let c = st.dz[j] + st.lambda[j] / rho;
            st.v[j] = match self.v_kind[j] {
                VKind::Free => c,
                VKind::Hard => c.max(self.v_lower[j]).min(self.v_upper[j]),
                VKind::Soft => prox_soft_box_unchecked(
                    c,
                    self.v_lower[j],
                    self.v_upper[j],
                    self.v_beta[j],
                    rho,
                ),
            };
            st.lambda[j] += rho * (st.dz[j] - st.v[j]);
        }

        let mut rp = 0.0_f64;
        let mut rd = 0.0_f64;
        for j in 0..st.v.len() {
            rp = rp.max((st.dz[j] - st.v[j]).abs());
            rd = rd.max((st.v[j] - st.v_prev[j]).abs());
        }
        st.primal_residual = rp;
        st.dual_residual = rd;
        st.iterations += 1;
        if !rp.is_finite() || !rd.is_finite() {
            return Err(SolverError::NumericalFailure {
                iteration: st.iterations,
            });
        }
        Ok(())
    }

    /// Runs the iteration until the exit test passes, the global cap is
    /// reached, or this call's budget is spent. Resuming a returned state
    /// continues the exact same iterate sequence.
    pub fn run(
        &self,
        st: &mut AdmmState,
        settings: &SolveSettings,
    ) -> Result<SolveStatus, SolverError> {
        settings.validate()?;
        let start = st.iterations;
        loop {
            if st.converged {
                return Ok(SolveStatus::Converged);
            }
            if st.iterations >= settings.max_iterations {
                return Ok(SolveStatus::MaxIterations);
            }
            if let Some(budget) = settings.iteration_budget {
                if st.iterations - start >= budget {
                    return Ok(SolveStatus::BudgetExhausted);
                }
            }
            self.iterate(st)?;
            if st.primal_residual <= settings.eps_primal
                && st.dual_residual <= settings.eps_dual
            {
                st.converged = true;
            }
        }
    }

    /// Full solve: `begin`, `run`, and solution extraction. With an
    /// iteration budget the returned state may be non-converged and can be
    /// passed to [`MpctProblem::run`] again to continue.
    pub fn solve(
        &self,
        state_estimate: &DVector<f64>,
        disturbance: &DVector<f64>,
        reference_state: &DVector<f64>,
        reference_input: &DVector<f64>,
        warm: Option<(&[f64], &[f64])>,
        settings: &SolveSettings,
    ) -> Result<(Solution, AdmmState), SolverError> {
        let mut st = self.begin(
            state_estimate,
            disturbance,
            reference_state,
            reference_input,
            warm,
        )?;
        let status = self.run(&mut st, settings)?;
        Ok((self.extract_solution(&st, status), st))
    }

    /// Builds the caller-facing solution from a solver state.
    pub fn extract_solution(&self, st: &AdmmState, status: SolveStatus) -> Solution {
        let dims = self.dims();
        let n = dims.states;
        let m = dims.inputs;
        // The applied input comes from the splitting vector, whose first
        // input block is hard-clamped; unscaling is a positive diagonal so
        // the clamp survives, and we re-clamp in original units to make the
        // bound exact.
        let u_scaled = &st.v[n..n + m];
        let mut control = self.unscale_input_slice(u_scaled);
        let (lo, hi) = self.input_bounds_orig();
        for i in 0..m {
            control[i] = control[i].max(lo[i]).min(hi[i]);
        }
        let s_off = dims.horizon * dims.stage_z();
        let reference_state = self.unscale_state_slice(&st.z[s_off..s_off + n]);
        let reference_input = self.unscale_input_slice(&st.z[s_off + n..s_off + n + m]);
        Solution {
            control,
            reference_state,
            reference_input,
            primal: st.z.clone(),
            split: st.v.clone(),
            multipliers: st.lambda.clone(),
            iterations: st.iterations,
            primal_residual: st.primal_residual,
            dual_residual: st.dual_residual,
            status,
        }
    }

    /// `‖G z − b‖_∞` for the current iterate; the equality constraints are
    /// solved exactly by the KKT step, so this stays at round-off level.
    pub fn equality_residual(&self, st: &AdmmState) -> f64 {
        let mut gz = vec![0.0; self.dims().mz()];
        self.apply_g(&st.z, &mut gz);
        for i in 0..gz.len() {
            gz[i] -= st.b[i];
        }
        inf_norm(&gz)
    }
}

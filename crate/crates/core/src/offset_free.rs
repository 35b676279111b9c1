//! Offset-free tracking machinery: a Luenberger observer on the
//! disturbance-augmented model, observer gain design through the
//! controller-observer duality (LQR on the transposed pair), and the
//! steady-state reference calculator that turns an output target into a
//! state-input reference pair.

use crate::model::LinearModel;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Riccati iteration found no stabilizing solution (last delta {0:.3e})")]
    RiccatiNoStabilizingSolution(f64),
    #[error("designed estimator is unstable (spectral radius {0:.6})")]
    UnstableEstimator(f64),
    #[error("reference system is rank deficient: no solution for this target")]
    RankDeficient,
}

/// Observer gains for the augmented state `(x, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub state_gain: DMatrix<f64>,
    pub disturbance_gain: DMatrix<f64>,
}

/// Estimates of the plant state and the additive output disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub state: DVector<f64>,
    pub disturbance: DVector<f64>,
}

impl EstimatorState {
    pub fn origin(n: usize, p: usize) -> Self {
        Self {
            state: DVector::zeros(n),
            disturbance: DVector::zeros(p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.state.iter().chain(self.disturbance.iter()).all(|v| v.is_finite())
    }
}

/// Augmented dynamics matrix `[[A, B_d], [0, I]]`.
pub fn augmented_dynamics(model: &LinearModel) -> DMatrix<f64> {
    let n = model.state_dim();
    let p = model.output_dim();
    let mut a = DMatrix::zeros(n + p, n + p);
    a.view_mut((0, 0), (n, n)).copy_from(&model.a);
    a.view_mut((0, n), (n, p)).copy_from(&model.bd);
    a.view_mut((n, n), (p, p))
        .copy_from(&DMatrix::identity(p, p));
    a
}

/// Augmented output matrix `[C, I]`.
pub fn augmented_output(model: &LinearModel) -> DMatrix<f64> {
    let n = model.state_dim();
    let p = model.output_dim();
    let mut c = DMatrix::zeros(p, n + p);
    c.view_mut((0, 0), (p, n)).copy_from(&model.c);
    c.view_mut((0, n), (p, p))
        .copy_from(&DMatrix::identity(p, p));
    c
}

/// One observer step:
///
/// ```text
/// [x̂⁺; d̂⁺] = [[A, B_d],[0, I]]·[x̂; d̂] + [B; 0]·u + [L_x; L_d]·(C x̂ + d̂ − y)
/// ```
pub fn observer_update(
    estimate: &EstimatorState,
    gains: &ObserverGains,
    model: &LinearModel,
    input: &DVector<f64>,
    measurement: &DVector<f64>,
) -> Result<EstimatorState, EstimatorError> {
    let n = model.state_dim();
    let p = model.output_dim();
    let check = |expected, got| {
        if expected != got {
            Err(EstimatorError::DimensionMismatch { expected, got })
        } else {
            Ok(())
        }
    };
    check(n, estimate.state.len())?;
    check(p, estimate.disturbance.len())?;
    check(model.input_dim(), input.len())?;
    check(p, measurement.len())?;

    let innovation = &model.c * &estimate.state + &estimate.disturbance - measurement;
    let state = &model.a * &estimate.state
        + &model.bd * &estimate.disturbance
        + &model.b * input
        + &gains.state_gain * &innovation;
    let disturbance = &estimate.disturbance + &gains.disturbance_gain * &innovation;
    Ok(EstimatorState { state, disturbance })
}

/// Fixed-point iteration for the discrete algebraic Riccati equation
///
/// ```text
/// P = AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q
/// ```
///
/// run to a 1e-12 relative update with a 10000-iteration cap.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EstimatorError> {
    let mut p = q.clone();
    let at = a.transpose();
    let bt = b.transpose();
    let mut delta = f64::INFINITY;
    for _ in 0..10_000 {
        let rpb = r + &bt * &p * b;
        let gain_term = rpb
            .lu()
            .solve(&(&bt * &p * a))
            .ok_or(EstimatorError::RiccatiNoStabilizingSolution(delta))?;
        let next = &at * &p * a - &at * &p * b * gain_term + q;
        delta = (&next - &p).amax();
        let scale = 1.0_f64.max(next.amax());
        p = next;
        if delta <= 1e-12 * scale {
            return Ok(p);
        }
    }
    Err(EstimatorError::RiccatiNoStabilizingSolution(delta))
}

/// DARE residual `‖P − (AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA + Q)‖_∞ / ‖P‖_∞`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let bt = b.transpose();
    let at = a.transpose();
    let rpb = r + &bt * p * b;
    let gain_term = rpb.lu().solve(&(&bt * p * a)).expect("R + BᵀPB invertible");
    let rhs = &at * p * a - &at * p * b * gain_term + q;
    (p - rhs).amax() / p.amax()
}

/// Designs stabilizing observer gains by applying the LQR design to the
/// transposed augmented pair: the dual feedback `K` of `(A_augᵀ, C_augᵀ)`
/// gives `L_aug = −Kᵀ`, which places the estimator error dynamics
/// `A_aug + L_aug C_aug` strictly inside the unit circle.
pub fn design_observer_gains(
    model: &LinearModel,
    process_weight: &DMatrix<f64>,
    measurement_weight: &DMatrix<f64>,
) -> Result<ObserverGains, EstimatorError> {
    let n = model.state_dim();
    let p = model.output_dim();
    if process_weight.nrows() != n + p || process_weight.ncols() != n + p {
        return Err(EstimatorError::DimensionMismatch {
            expected: n + p,
            got: process_weight.nrows(),
        });
    }
    if measurement_weight.nrows() != p || measurement_weight.ncols() != p {
        return Err(EstimatorError::DimensionMismatch {
            expected: p,
            got: measurement_weight.nrows(),
        });
    }
    let a_aug = augmented_dynamics(model);
    let c_aug = augmented_output(model);
    let a_dual = a_aug.transpose();
    let b_dual = c_aug.transpose();
    let riccati = solve_dare(&a_dual, &b_dual, process_weight, measurement_weight)?;
    let rpb = measurement_weight + b_dual.transpose() * &riccati * &b_dual;
    let k = rpb
        .lu()
        .solve(&(b_dual.transpose() * &riccati * &a_dual))
        .ok_or(EstimatorError::RiccatiNoStabilizingSolution(f64::NAN))?;
    let l_aug = -k.transpose();
    let gains = ObserverGains {
        state_gain: l_aug.view((0, 0), (n, p)).clone_owned(),
        disturbance_gain: l_aug.view((n, 0), (p, p)).clone_owned(),
    };
    let radius = estimator_spectral_radius(model, &gains);
    if radius >= 1.0 {
        return Err(EstimatorError::UnstableEstimator(radius));
    }
    Ok(gains)
}

/// Spectral radius of the estimator error dynamics `A_aug + L_aug C_aug`.
pub fn estimator_spectral_radius(model: &LinearModel, gains: &ObserverGains) -> f64 {
    let n = model.state_dim();
    let p = model.output_dim();
    let mut l_aug = DMatrix::zeros(n + p, p);
    l_aug.view_mut((0, 0), (n, p)).copy_from(&gains.state_gain);
    l_aug
        .view_mut((n, 0), (p, p))
        .copy_from(&gains.disturbance_gain);
    let closed = augmented_dynamics(model) + l_aug * augmented_output(model);
    closed
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Solves the steady-state reference system
///
/// ```text
/// [[A−I, B], [C, 0]] [x_r; u_r] = [−B_d d̂; y_r − d̂]
/// ```
///
/// returning the minimum-norm solution when the system is underdetermined.
/// Singular values below 1e-10 of the largest are treated as zero; if the
/// remaining system is inconsistent the target is unreachable and
/// `RankDeficient` is returned.
pub fn compute_reference(
    model: &LinearModel,
    target: &DVector<f64>,
    disturbance: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), EstimatorError> {
    let n = model.state_dim();
    let m = model.input_dim();
    let p = model.output_dim();
    if target.len() != p {
        return Err(EstimatorError::DimensionMismatch {
            expected: p,
            got: target.len(),
        });
    }
    if disturbance.len() != p {
        return Err(EstimatorError::DimensionMismatch {
            expected: p,
            got: disturbance.len(),
        });
    }
    let mut system = DMatrix::zeros(n + p, n + m);
    system
        .view_mut((0, 0), (n, n))
        .copy_from(&(&model.a - DMatrix::identity(n, n)));
    system.view_mut((0, n), (n, m)).copy_from(&model.b);
    system.view_mut((n, 0), (p, n)).copy_from(&model.c);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-&model.bd * disturbance));
    rhs.rows_mut(n, p).copy_from(&(target - disturbance));

    let svd = system.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let solution = svd
        .solve(&rhs, eps)
        .map_err(|_| EstimatorError::RankDeficient)?;
    let residual = (&system * &solution - &rhs).amax();
    if residual > 1e-8 * (1.0 + rhs.amax()) {
        return Err(EstimatorError::RankDeficient);
    }
    Ok((
        solution.rows(0, n).clone_owned(),
        solution.rows(n, m).clone_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn scalar_model(a: f64, b: f64, c: f64) -> LinearModel {
        LinearModel::without_coupled(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    #[test]
    fn zero_everything_stays_at_origin() {
        let model = scalar_model(0.5, 1.0, 1.0);
        let gains = ObserverGains {
            state_gain: DMatrix::zeros(1, 1),
            disturbance_gain: DMatrix::zeros(1, 1),
        };
        let est = EstimatorState::origin(1, 1);
        let next = observer_update(
            &est,
            &gains,
            &model,
            &dvector![0.0],
            &dvector![0.0],
        )
        .unwrap();
        assert_eq!(next.state[0], 0.0);
        assert_eq!(next.disturbance[0], 0.0);
    }

    #[test]
    fn perfect_prediction_reduces_to_model_propagation() {
        let model = LinearModel::without_coupled(
            dmatrix![0.9, 0.2; 0.0, 0.7],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        let gains = ObserverGains {
            state_gain: dmatrix![0.4; 0.4],
            disturbance_gain: dmatrix![0.3],
        };
        let est = EstimatorState {
            state: dvector![1.0, -2.0],
            disturbance: dvector![0.5],
        };
        let y = &model.c * &est.state + &est.disturbance;
        let u = dvector![0.7];
        let next = observer_update(&est, &gains, &model, &u, &y).unwrap();
        let expect = &model.a * &est.state + &model.b * &u;
        assert_relative_eq!(next.state[0], expect[0], max_relative = 1e-14);
        assert_relative_eq!(next.state[1], expect[1], max_relative = 1e-14);
        assert_relative_eq!(next.disturbance[0], est.disturbance[0], max_relative = 1e-14);
    }

    #[test]
    fn observer_update_is_linear_in_the_estimate() {
        let model = LinearModel::without_coupled(
            dmatrix![0.9, 0.2; 0.0, 0.7],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.5],
        )
        .unwrap();
        let gains = ObserverGains {
            state_gain: dmatrix![-0.3; -0.1],
            disturbance_gain: dmatrix![-0.2],
        };
        let zero_u = dvector![0.0];
        let zero_y = dvector![0.0];
        let e1 = EstimatorState {
            state: dvector![1.0, 2.0],
            disturbance: dvector![-1.0],
        };
        let e2 = EstimatorState {
            state: dvector![-0.5, 0.3],
            disturbance: dvector![0.7],
        };
        let alpha = 2.5;
        let combined = EstimatorState {
            state: &e1.state * alpha + &e2.state,
            disturbance: &e1.disturbance * alpha + &e2.disturbance,
        };
        let u1 = observer_update(&e1, &gains, &model, &zero_u, &zero_y).unwrap();
        let u2 = observer_update(&e2, &gains, &model, &zero_u, &zero_y).unwrap();
        let uc = observer_update(&combined, &gains, &model, &zero_u, &zero_y).unwrap();
        assert_relative_eq!(
            (&u1.state * alpha + &u2.state)[0],
            uc.state[0],
            max_relative = 1e-12
        );
        assert_relative_eq!(
            (&u1.disturbance * alpha + &u2.disturbance)[0],
            uc.disturbance[0],
            max_relative = 1e-12
        );
    }

    #[test]
    fn stable_scalar_design() {
        let model = scalar_model(0.5, 1.0, 1.0);
        let gains = design_observer_gains(
            &model,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let radius = estimator_spectral_radius(&model, &gains);
        assert!(radius < 1.0, "spectral radius {radius}");
    }

    #[test]
    fn dare_fixed_point_has_small_residual() {
        let a = dmatrix![1.1, 0.3; -0.2, 0.8];
        let b = dmatrix![0.0; 1.0];
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.5);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &p) < 1e-8);
    }

    #[test]
    fn observer_error_decays_geometrically() {
        // Plant with a constant additive output disturbance; innovation
        // should contract at the estimator's spectral radius.
        let model = LinearModel::without_coupled(
            dmatrix![0.9, 0.2; -0.1, 0.7],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.3],
        )
        .unwrap();
        let gains = design_observer_gains(
            &model,
            &DMatrix::identity(3, 3),
            &(DMatrix::identity(1, 1) * 10.0),
        )
        .unwrap();
        let radius = estimator_spectral_radius(&model, &gains);
        assert!(radius < 1.0);

        let mut x = dvector![2.0, -1.0];
        let d_true = dvector![0.8];
        let mut est = EstimatorState::origin(2, 1);
        let u = dvector![0.3];
        let mut innov = Vec::new();
        for _ in 0..200 {
            let y = &model.c * &x + &d_true;
            innov.push((&model.c * &est.state + &est.disturbance - &y).amax());
            est = observer_update(&est, &gains, &model, &u, &y).unwrap();
            x = &model.a * &x + &model.b * &u;
        }
        let rate = radius + 0.02;
        let reference = innov[20].max(1e-12);
        let bound = (reference * rate.powi(160)).max(1e-12);
        assert!(
            innov[180] <= bound * 10.0,
            "innovation {} at step 180 exceeds geometric envelope {}",
            innov[180],
            bound
        );
    }

    #[test]
    fn reference_at_origin_is_origin() {
        let model = scalar_model(0.5, 1.0, 1.0);
        let (xr, ur) =
            compute_reference(&model, &dvector![0.0], &dvector![0.0]).unwrap();
        assert_eq!(xr[0], 0.0);
        assert_eq!(ur[0], 0.0);
    }

    #[test]
    fn scalar_reference_hand_solve() {
        // (A−1)x + Bu = 0 and Cx = 1 with A=0.5, B=1, C=1 give (1, 0.5).
        let model = scalar_model(0.5, 1.0, 1.0);
        let (xr, ur) =
            compute_reference(&model, &dvector![1.0], &dvector![0.0]).unwrap();
        assert_relative_eq!(xr[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(ur[0], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn reference_is_homogeneous_without_disturbance_input() {
        let model = LinearModel::without_coupled(
            dmatrix![0.9, 0.2; -0.1, 0.7],
            dmatrix![0.3, 0.0; 0.0, 1.0],
            dmatrix![1.0, 0.0; 0.0, 1.0],
        )
        .unwrap();
        let y = dvector![0.4, -0.2];
        let d = dvector![0.1, 0.3];
        let (x1, u1) = compute_reference(&model, &y, &d).unwrap();
        let (x2, u2) = compute_reference(&model, &(&y * 3.0), &(&d * 3.0)).unwrap();
        assert!((&x1 * 3.0 - &x2).amax() < 1e-10);
        assert!((&u1 * 3.0 - &u2).amax() < 1e-10);
    }

    #[test]
    fn underdetermined_reference_returns_minimum_norm() {
        // Two inputs, one output: a one-parameter family of steady pairs;
        // the returned pair must be the least-norm one and satisfy the
        // stationarity equations.
        let model = LinearModel::without_coupled(
            dmatrix![0.5],
            dmatrix![1.0, 1.0],
            dmatrix![1.0],
        )
        .unwrap();
        let (xr, ur) = compute_reference(&model, &dvector![2.0], &dvector![0.0]).unwrap();
        assert_relative_eq!(xr[0], 2.0, max_relative = 1e-12);
        // stationarity: −0.5·x + u₁ + u₂ = 0; minimum norm splits evenly.
        assert_relative_eq!(ur[0], 0.5, max_relative = 1e-10);
        assert_relative_eq!(ur[1], 0.5, max_relative = 1e-10);
    }

    #[test]
    fn unreachable_target_reports_rank_deficiency() {
        // B = 0 makes any nonzero output target unreachable when A−I is
        // invertible.
        let model = LinearModel::without_coupled(
            dmatrix![0.5],
            DMatrix::zeros(1, 1),
            dmatrix![1.0],
        )
        .unwrap();
        assert!(matches!(
            compute_reference(&model, &dvector![1.0], &dvector![0.0]),
            Err(EstimatorError::RankDeficient)
        ));
    }
}

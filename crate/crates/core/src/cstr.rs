//! Nonlinear continuous stirred-tank reactor test plant: Arrhenius kinetics
//! with a parallel and a consecutive side reaction, cooling jacket, low-pass
//! input filters, an AR(1) feed-temperature disturbance, RK4 integration,
//! equilibrium refinement, and linearization/discretization of the extended
//! six-state dynamics.
//!
//! Unit conventions: concentrations in mol/l, temperatures in °C, the
//! normalized feed flow in 1/h, cooling power in kJ/h, and time in hours
//! inside the derivative. Reactor volume is kept in m³ and converted to
//! liters where the energy balance and the production rate need it.

use nalgebra::DMatrix;
use thiserror::Error;

pub const CELSIUS_TO_KELVIN: f64 = 273.15;
const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("temperature {0} °C is at or below absolute zero")]
    InvalidTemperature(f64),
    #[error("state became non-finite during integration")]
    NonFiniteState,
    #[error("point is not an equilibrium: derivative residual {0:.3e} exceeds {1:.3e}")]
    NotAnEquilibrium(f64, f64),
    #[error("equilibrium refinement did not converge (residual {0:.3e})")]
    NoEquilibriumFound(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Physical parameters of the reactor. Defaults are the benchmark values;
/// the jacket heat-transfer coefficient is 4032 kJ/(h·m²·K), which is the
/// value consistent with the nominal equilibrium below.
#[derive(Debug, Clone, PartialEq)]
pub struct CstrParams {
    /// Collision factor of A -> B [1/h].
    pub collision_ab: f64,
    /// Collision factor of B -> C [1/h].
    pub collision_bc: f64,
    /// Collision factor of 2A -> D [1/(mol·h)].
    pub collision_ad: f64,
    /// Activation temperature of A -> B [K] (negative).
    pub activation_ab: f64,
    /// Activation temperature of B -> C [K].
    pub activation_bc: f64,
    /// Activation temperature of 2A -> D [K].
    pub activation_ad: f64,
    /// Concentration of A in the feed [mol/l].
    pub feed_concentration: f64,
    /// Enthalpy of A -> B [kJ/mol].
    pub enthalpy_ab: f64,
    /// Enthalpy of B -> C [kJ/mol].
    pub enthalpy_bc: f64,
    /// Enthalpy of 2A -> D [kJ/mol].
    pub enthalpy_ad: f64,
    /// Density of the feed fluid [kg/l].
    pub fluid_density: f64,
    /// Heat capacity of the feed fluid [kJ/(kg·K)].
    pub heat_capacity: f64,
    /// Jacket heat-transfer coefficient [kJ/(h·m²·K)].
    pub heat_transfer: f64,
    /// Jacket surface [m²].
    pub jacket_surface: f64,
    /// Reactor volume [m³].
    pub reactor_volume: f64,
    /// Coolant mass [kg].
    pub coolant_mass: f64,
    /// Coolant heat capacity [kJ/(kg·K)].
    pub coolant_heat_capacity: f64,
    /// Time constant of the feed-flow input filter [s].
    pub flow_filter_tc: f64,
    /// Time constant of the cooling-power input filter [s].
    pub power_filter_tc: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            collision_ab: 1.287e12,
            collision_bc: 1.287e12,
            collision_ad: 9.043e9,
            activation_ab: -9758.3,
            activation_bc: -9758.3,
            activation_ad: -8560.0,
            feed_concentration: 5.1,
            enthalpy_ab: 4.2,
            enthalpy_bc: -11.0,
            enthalpy_ad: -41.85,
            fluid_density: 0.9342,
            heat_capacity: 3.01,
            heat_transfer: 4032.0,
            jacket_surface: 0.215,
            reactor_volume: 0.01,
            coolant_mass: 5.0,
            coolant_heat_capacity: 2.0,
            flow_filter_tc: 250.0,
            power_filter_tc: 125.0,
        }
    }
}

impl CstrParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("fluid_density", self.fluid_density),
            ("heat_capacity", self.heat_capacity),
            ("jacket_surface", self.jacket_surface),
            ("reactor_volume", self.reactor_volume),
            ("coolant_mass", self.coolant_mass),
            ("coolant_heat_capacity", self.coolant_heat_capacity),
            ("flow_filter_tc", self.flow_filter_tc),
            ("power_filter_tc", self.power_filter_tc),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(PlantError::InvalidParameter(name));
            }
        }
        Ok(())
    }

    /// Reactor volume in liters, the unit used by the energy balance and the
    /// production-rate output.
    pub fn volume_liters(&self) -> f64 {
        self.reactor_volume * 1000.0
    }

    /// Input-filter time constants in hours.
    fn filter_tc_hours(&self) -> [f64; 2] {
        [
            self.flow_filter_tc / SECONDS_PER_HOUR,
            self.power_filter_tc / SECONDS_PER_HOUR,
        ]
    }
}

/// Which reaction's Arrhenius rate to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reaction {
    AtoB,
    BtoC,
    AtoD,
}

/// Arrhenius rate `k(θ) = k₀ · exp(E / (θ + 273.15))` in the units of the
/// collision factor.
pub fn reaction_rate(params: &CstrParams, which: Reaction, temp: f64) -> Result<f64, PlantError> {
    if temp <= -CELSIUS_TO_KELVIN {
        return Err(PlantError::InvalidTemperature(temp));
    }
    let (k0, act) = match which {
        Reaction::AtoB => (params.collision_ab, params.activation_ab),
        Reaction::BtoC => (params.collision_bc, params.activation_bc),
        Reaction::AtoD => (params.collision_ad, params.activation_ad),
    };
    Ok(k0 * (act / (temp + CELSIUS_TO_KELVIN)).exp())
}

/// Extended plant state: four reactor states plus the two filtered inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CstrState {
    /// Concentration of A [mol/l].
    pub conc_a: f64,
    /// Concentration of B [mol/l].
    pub conc_b: f64,
    /// Reactor temperature [°C].
    pub temp: f64,
    /// Jacket temperature [°C].
    pub temp_coolant: f64,
    /// Filtered feed flow [1/h].
    pub flow: f64,
    /// Filtered cooling power [kJ/h].
    pub cooling_power: f64,
}

impl CstrState {
    pub fn to_array(self) -> [f64; 6] {
        [
            self.conc_a,
            self.conc_b,
            self.temp,
            self.temp_coolant,
            self.flow,
            self.cooling_power,
        ]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            conc_a: x[0],
            conc_b: x[1],
            temp: x[2],
            temp_coolant: x[3],
            flow: x[4],
            cooling_power: x[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Controlled outputs: concentration of B and its production rate
/// `p_B = c_B · F_N · V_R` [mol/h].
pub fn output(params: &CstrParams, state: &CstrState) -> [f64; 2] {
    [
        state.conc_b,
        state.conc_b * state.flow * params.volume_liters(),
    ]
}

/// Time derivative of the extended state at filtered inputs `u_f`, with the
/// commanded inputs driving the first-order filters. Units are per hour.
pub fn derivative(
    params: &CstrParams,
    state: &CstrState,
    command: [f64; 2],
    feed_temp: f64,
) -> Result<[f64; 6], PlantError> {
    if !state.is_finite() {
        return Err(PlantError::NonFiniteState);
    }
    let k1 = reaction_rate(params, Reaction::AtoB, state.temp)?;
    let k2 = reaction_rate(params, Reaction::BtoC, state.temp)?;
    let k3 = reaction_rate(params, Reaction::AtoD, state.temp)?;
    let flow = state.flow;
    let ca = state.conc_a;
    let cb = state.conc_b;
    let rho_cp = params.fluid_density * params.heat_capacity;
    let kw_ar = params.heat_transfer * params.jacket_surface;

    let d_ca = flow * (params.feed_concentration - ca) - k1 * ca - k3 * ca * ca;
    let d_cb = -flow * cb + k1 * ca - k2 * cb;
    let heat = k1 * ca * params.enthalpy_ab + k2 * cb * params.enthalpy_bc
        + k3 * ca * ca * params.enthalpy_ad;
    let d_temp = flow * (feed_temp - state.temp) - heat / rho_cp
        + kw_ar * (state.temp_coolant - state.temp) / (rho_cp * params.volume_liters());
    let d_temp_coolant = (state.cooling_power + kw_ar * (state.temp - state.temp_coolant))
        / (params.coolant_mass * params.coolant_heat_capacity);
    let tc = params.filter_tc_hours();
    let d_flow = (command[0] - state.flow) / tc[0];
    let d_power = (command[1] - state.cooling_power) / tc[1];
    Ok([d_ca, d_cb, d_temp, d_temp_coolant, d_flow, d_power])
}

/// Classical fourth-order Runge-Kutta over `sample_time_s / substeps`
/// increments, holding the command and the feed temperature constant over
/// the sample period.
pub fn integrate_step(
    params: &CstrParams,
    state: &CstrState,
    command: [f64; 2],
    feed_temp: f64,
    sample_time_s: f64,
    substeps: usize,
) -> Result<CstrState, PlantError> {
    if sample_time_s <= 0.0 {
        return Err(PlantError::InvalidParameter("sample_time_s"));
    }
    if substeps == 0 {
        return Err(PlantError::InvalidParameter("substeps"));
    }
    let h = sample_time_s / SECONDS_PER_HOUR / substeps as f64;
    let mut x = state.to_array();
    for _ in 0..substeps {
        let s0 = CstrState::from_array(x);
        let k1 = derivative(params, &s0, command, feed_temp)?;
        let k2 = derivative(
            params,
            &CstrState::from_array(axpy(&x, &k1, h / 2.0)),
            command,
            feed_temp,
        )?;
        let k3 = derivative(
            params,
            &CstrState::from_array(axpy(&x, &k2, h / 2.0)),
            command,
            feed_temp,
        )?;
        let k4 = derivative(
            params,
            &CstrState::from_array(axpy(&x, &k3, h)),
            command,
            feed_temp,
        )?;
        for i in 0..6 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !x[i].is_finite() {
                return Err(PlantError::NonFiniteState);
            }
        }
    }
    Ok(CstrState::from_array(x))
}

fn axpy(x: &[f64; 6], d: &[f64; 6], h: f64) -> [f64; 6] {
    let mut out = *x;
    for i in 0..6 {
        out[i] += h * d[i];
    }
    out
}

/// AR(1) model of the feed-temperature disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel {
    /// Nominal feed temperature [°C].
    pub nominal: f64,
    /// Autoregressive coefficient.
    pub coefficient: f64,
    /// Variance of the per-step Gaussian innovation.
    pub noise_variance: f64,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self {
            nominal: 104.9,
            coefficient: 0.99,
            noise_variance: 0.01,
        }
    }
}

impl DisturbanceModel {
    /// One step of the recursion
    /// `θ_d⁺ = a·θ_d + (1−a)·θ₀ + w`, where `w` is the caller-supplied noise
    /// sample (already scaled to standard deviation `noise_variance.sqrt()`).
    pub fn step(&self, feed_temp: f64, noise: f64) -> f64 {
        self.coefficient * feed_temp + (1.0 - self.coefficient) * self.nominal + noise
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_variance.sqrt()
    }
}

/// A refined steady state of the extended plant together with the inputs and
/// feed temperature it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: CstrState,
    pub input: [f64; 2],
    pub feed_temp: f64,
}

impl Equilibrium {
    pub fn output(&self, params: &CstrParams) -> [f64; 2] {
        output(params, &self.state)
    }
}

/// Nominal operating point used throughout: feed flow 25 1/h, cooling power
/// -4000 kJ/h, feed temperature 104.9 °C. The rounded reactor states used as
/// the refinement seed are c_A 3.161, c_B 0.912, θ 108.53, θ_K 103.91.
pub fn nominal_operating_guess() -> (CstrState, [f64; 2], f64) {
    (
        CstrState {
            conc_a: 3.161,
            conc_b: 0.912,
            temp: 108.53,
            temp_coolant: 103.91,
            flow: 25.0,
            cooling_power: -4000.0,
        },
        [25.0, -4000.0],
        104.9,
    )
}

/// Refines a steady state of the four reactor equations at fixed inputs by
/// damped Newton iteration with finite-difference Jacobians. The filter
/// states equal the commanded inputs at any equilibrium.
pub fn find_equilibrium(
    params: &CstrParams,
    input: [f64; 2],
    feed_temp: f64,
    guess: &CstrState,
) -> Result<Equilibrium, PlantError> {
    let mut y = [guess.conc_a, guess.conc_b, guess.temp, guess.temp_coolant];
    let residual = |y: &[f64; 4]| -> Result<[f64; 4], PlantError> {
        let state = CstrState {
            conc_a: y[0],
            conc_b: y[1],
            temp: y[2],
            temp_coolant: y[3],
            flow: input[0],
            cooling_power: input[1],
        };
        let d = derivative(params, &state, input, feed_temp)?;
        Ok([d[0], d[1], d[2], d[3]])
    };

    let mut best_norm = f64::INFINITY;
    for _ in 0..100 {
        let r = residual(&y)?;
        let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if norm < 1e-12 {
            break;
        }
        best_norm = best_norm.min(norm);
        let mut jac = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let step = 1e-7 * (1.0 + y[j].abs());
            let mut yp = y;
            yp[j] += step;
            let mut ym = y;
            ym[j] -= step;
            let rp = residual(&yp)?;
            let rm = residual(&ym)?;
            for i in 0..4 {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        let rhs = nalgebra::DVector::from_row_slice(&r);
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or(PlantError::NoEquilibriumFound(norm))?;
        for i in 0..4 {
            y[i] -= delta[i];
        }
    }
    let r = residual(&y)?;
    let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if norm > 1e-9 {
        return Err(PlantError::NoEquilibriumFound(norm));
    }
    Ok(Equilibrium {
        state: CstrState {
            conc_a: y[0],
            conc_b: y[1],
            temp: y[2],
            temp_coolant: y[3],
            flow: input[0],
            cooling_power: input[1],
        },
        input,
        feed_temp,
    })
}

/// Refined nominal equilibrium.
pub fn nominal_equilibrium(params: &CstrParams) -> Result<Equilibrium, PlantError> {
    let (guess, input, feed_temp) = nominal_operating_guess();
    find_equilibrium(params, input, feed_temp, &guess)
}

/// Continuous-time Jacobians of the extended dynamics at an equilibrium,
/// via central finite differences with per-component steps
/// `1e-6·(1+|value|)`, plus the output map linearized analytically. The
/// production-rate row couples c_B and the flow filter state.
pub fn linearize(
    params: &CstrParams,
    eq: &Equilibrium,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), PlantError> {
    let d0 = derivative(params, &eq.state, eq.input, eq.feed_temp)?;
    let res = d0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if res > 0.05 {
        return Err(PlantError::NotAnEquilibrium(res, 0.05));
    }

    let x0 = eq.state.to_array();
    let mut a_c = DMatrix::zeros(6, 6);
    for j in 0..6 {
        let step = 1e-6 * (1.0 + x0[j].abs());
        let mut xp = x0;
        xp[j] += step;
        let mut xm = x0;
        xm[j] -= step;
        let dp = derivative(params, &CstrState::from_array(xp), eq.input, eq.feed_temp)?;
        let dm = derivative(params, &CstrState::from_array(xm), eq.input, eq.feed_temp)?;
        for i in 0..6 {
            a_c[(i, j)] = (dp[i] - dm[i]) / (2.0 * step);
        }
    }

    let mut b_c = DMatrix::zeros(6, 2);
    for j in 0..2 {
        let step = 1e-6 * (1.0 + eq.input[j].abs());
        let mut up = eq.input;
        up[j] += step;
        let mut um = eq.input;
        um[j] -= step;
        let dp = derivative(params, &eq.state, up, eq.feed_temp)?;
        let dm = derivative(params, &eq.state, um, eq.feed_temp)?;
        for i in 0..6 {
            b_c[(i, j)] = (dp[i] - dm[i]) / (2.0 * step);
        }
    }

    let vl = params.volume_liters();
    let mut c = DMatrix::zeros(2, 6);
    c[(0, 1)] = 1.0;
    c[(1, 1)] = eq.state.flow * vl;
    c[(1, 4)] = eq.state.conc_b * vl;

    Ok((a_c, b_c, c))
}

/// Exact zero-order-hold discretization over the sample time, computed from
/// the exponential of the augmented matrix `[[A_c, B_c], [0, 0]]`.
pub fn discretize(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    sample_time_s: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a_c.nrows();
    let m = b_c.ncols();
    let t = sample_time_s / SECONDS_PER_HOUR;
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_c * t));
    aug.view_mut((0, n), (n, m)).copy_from(&(b_c * t));
    let phi = expm(&aug);
    (
        phi.view((0, 0), (n, n)).clone_owned(),
        phi.view((0, n), (n, m)).clone_owned(),
    )
}

/// Matrix exponential by scaling-and-squaring with a Taylor series, summing
/// terms until they fall below 1e-13 of the accumulated norm.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.amax();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..200 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() <= 1e-13 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

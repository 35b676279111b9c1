//! The practical tracking-MPC formulation compiled to ADMM form and solved
//! by alternating a structured equality-constrained QP step, a separable
//! proximal step with the closed-form soft-box operator, and a dual ascent
//! step. Supports warm starting, diagonal preconditioning and resumable
//! iteration budgets.

mod admm;
mod problem;

pub use admm::{
    prox_soft_box, warm_start_shift, AdmmState, Solution, SolveSettings, SolveStatus,
};
pub use problem::{Dims, MpctProblem};

use crate::linalg::LinalgError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("prediction horizon {horizon} must exceed the controllability index {index}")]
    HorizonTooShort { horizon: usize, index: usize },
    #[error("the (A, B) pair is not controllable; no horizon is long enough")]
    UncontrollablePair,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("numerical failure at iteration {iteration}: non-finite residual")]
    NumericalFailure { iteration: usize },
    #[error("invalid bounds for proximal operator: {0}")]
    InvalidBounds(&'static str),
    #[error("invalid solver settings: {0}")]
    InvalidSettings(&'static str),
}

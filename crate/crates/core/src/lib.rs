//! Tracking MPC with an artificial reference, soft constraints, back-off
//! tightening and offset-free estimation, solved by a structure-exploiting
//! ADMM method, together with a Monte-Carlo harness that certifies
//! closed-loop performance bounds on a simulated nonlinear reactor.

pub mod controller;
pub mod cstr;
pub mod linalg;
pub mod model;
pub mod offset_free;
pub mod solver;

//! Sensitivity laboratory for horizon-N equality-constrained dynamic
//! optimization problems.
//!
//! The crate builds problems of the form
//!
//! ```text
//! min   sum_{i<N} l_i(x_i, u_i; d_i) + l_N(x_N; d_N)
//! s.t.  T x_0 = d_{-1},   x_{i+1} = f_i(x_i, u_i; d_i)
//! ```
//!
//! solves them with a structured Newton method, measures the regularity
//! moduli that govern how data perturbations propagate along the horizon
//! (LICQ, second-order sufficiency, Lagrangian Hessian bounds, windowed
//! controllability and observability), and runs perturbation experiments
//! that fit an exponential sensitivity envelope `Upsilon * rho^|i-j|`.
//!
//! Multipliers follow the pairing `L = sum l_i + lambda_{-1}^T (d_{-1} - T x_0)
//! + sum lambda_i^T (f_i - x_{i+1})`, i.e. `L = objective - lambda^T c` where
//! `c` is the stacked constraint residual returned by
//! [`problem::evaluate_constraints`].

pub mod certify;
pub mod diff;
pub mod eds;
pub mod error;
pub mod kkt;
pub mod models;
pub mod problem;

pub use error::{Error, Result};
pub use problem::{
    DOProblem, DataTrajectory, Dimensions, Dynamics, PrimalDualTrajectory, StageCost,
};

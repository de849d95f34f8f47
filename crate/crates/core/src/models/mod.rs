//! Model zoo: quadrotor case study, linear-quadratic test systems, and
//! steady-state tooling for time-invariant problems.

mod lq;
mod quadrotor;
mod steady;

pub use lq::{double_integrator, lq_chain, lq_problem, scalar_oracle, LqMatrices};
pub use quadrotor::{
    quadrotor_continuous_rhs, quadrotor_problem, quadrotor_state_weights, rk4_step,
    QuadrotorParams, STATE_ZDOT,
};
pub use steady::{
    build_ti_costs, solve_steady_state, steady_data, steady_trajectory, time_invariant_problem,
    SteadyState, TiCosts,
};

use nalgebra::{DMatrix, DVector};

use crate::problem::{DOProblem, DataTrajectory, Dynamics, PrimalDualTrajectory, StageCost};

/// A problem together with its base data and a warm start for the base solve.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub problem: DOProblem,
    pub data: DataTrajectory,
    pub warm_start: PrimalDualTrajectory,
}

/// Named presets understood by front ends.
pub const PRESETS: [(&str, &str); 4] = [
    (
        "quadrotor",
        "9-state quadrotor, RK4 discretization, knobs q (observability) and b (controllability)",
    ),
    (
        "lq_chain",
        "seeded random time-invariant LQ chain with prescribed spectral radius",
    ),
    (
        "double_integrator",
        "2-state double integrator, Q = R = I, T = I",
    ),
    (
        "scalar_oracle",
        "N = 1 scalar LQ problem with a hand-derived solution",
    ),
];

/// `weight * ((x - d)^T Q (x - d) + u^T R u)` with analytic derivatives in
/// `[x; u; d]`. Pass an empty `R` for terminal costs.
pub fn tracking_cost(q: DMatrix<f64>, r: DMatrix<f64>, weight: f64) -> StageCost {
    let nx = q.nrows();
    let nu = r.nrows();
    let (qv, rv) = (q.clone(), r.clone());
    let (qg, rg) = (q.clone(), r.clone());
    let value = move |x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>| {
        let e = x - d;
        weight * (e.dot(&(&qv * &e)) + u.dot(&(&rv * u)))
    };
    let gradient = move |x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>| {
        let gq = &qg * (x - d) * (2.0 * weight);
        let gu = &rg * u * (2.0 * weight);
        let mut g = DVector::zeros(2 * nx + nu);
        g.rows_mut(0, nx).copy_from(&gq);
        g.rows_mut(nx, nu).copy_from(&gu);
        g.rows_mut(nx + nu, nx).copy_from(&(-gq));
        g
    };
    let mut h = DMatrix::zeros(2 * nx + nu, 2 * nx + nu);
    let q2 = &q * (2.0 * weight);
    h.view_mut((0, 0), (nx, nx)).copy_from(&q2);
    h.view_mut((nx, nx), (nu, nu))
        .copy_from(&(&r * (2.0 * weight)));
    h.view_mut((0, nx + nu), (nx, nx)).copy_from(&(-&q2));
    h.view_mut((nx + nu, 0), (nx, nx)).copy_from(&(-&q2));
    h.view_mut((nx + nu, nx + nu), (nx, nx)).copy_from(&q2);
    StageCost::new(value)
        .with_gradient(gradient)
        .with_hessian(move |_, _, _| h.clone())
}

/// `x_{+} = A x + B u`, independent of the stage data.
pub fn linear_dynamics(a: DMatrix<f64>, b: DMatrix<f64>) -> Dynamics {
    let (av, bv) = (a.clone(), b.clone());
    let nx = a.nrows();
    let nu = b.ncols();
    Dynamics::new(move |x, u, _| &av * x + &bv * u).with_jacobian(move |_, _, d| {
        let mut j = DMatrix::zeros(nx, nx + nu + d.len());
        j.view_mut((0, 0), (nx, nx)).copy_from(&a);
        j.view_mut((0, nx), (nx, nu)).copy_from(&b);
        j
    })
}

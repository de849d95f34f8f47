//! Quadrotor with state `(X, X', Y, Y', Z, Z', gamma, beta, alpha)` and
//! control `(a, omega_X, omega_Y, omega_Z)`; attitude angles are roll, pitch
//! and yaw, and `a` is the mass-normalized thrust.

use nalgebra::{DMatrix, DVector};

use super::{solve_steady_state, tracking_cost, ModelInstance};
use crate::error::{Error, Result};
use crate::kkt::SolveOptions;
use crate::problem::{
    DOProblem, DataTrajectory, Dimensions, Dynamics, PrimalDualTrajectory, StageOracles,
};

pub const NX: usize = 9;
pub const NU: usize = 4;
/// Index of the vertical velocity in the state vector.
pub const STATE_ZDOT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorParams {
    /// Weight on `(Y', Z, Z')` in the stage cost.
    pub q: f64,
    /// Gain of the `omega_X` input on the attitude dynamics.
    pub b: f64,
    pub g: f64,
    pub dt: f64,
    pub horizon: usize,
    /// Hover altitude of the reference and of the initial state.
    pub altitude: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            q: 1.0,
            b: 1.0,
            g: 9.81,
            dt: 0.3,
            horizon: 60,
            altitude: 0.0,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.horizon < 2 {
            return Err(Error::Config("quadrotor horizon must be at least 2".into()));
        }
        if !(self.q >= 0.0 && self.b >= 0.0) {
            return Err(Error::Config("q and b must be nonnegative".into()));
        }
        if !self.g.is_finite() || !self.altitude.is_finite() {
            return Err(Error::Config("g and altitude must be finite".into()));
        }
        Ok(())
    }

    pub fn hover_state(&self) -> DVector<f64> {
        let mut x = DVector::zeros(NX);
        x[4] = self.altitude;
        x
    }

    pub fn hover_control(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.g, 0.0, 0.0, 0.0])
    }
}

/// `diag(1, 1, 1, q, q, q, 1, 1, 1)`.
pub fn quadrotor_state_weights(q: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![
        1.0, 1.0, 1.0, q, q, q, 1.0, 1.0, 1.0,
    ]))
}

/// Right-hand side and its Jacobians in `x` and `u`. Requires `cos(beta) != 0`.
fn rhs_with_jacobian(
    x: &DVector<f64>,
    u: &DVector<f64>,
    b: f64,
    g: f64,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (sg, cg) = x[6].sin_cos();
    let (sb, cb) = x[7].sin_cos();
    let (sa, ca) = x[8].sin_cos();
    let tb = sb / cb;
    let (a, wx, wy, wz) = (u[0], u[1], u[2], u[3]);

    let hx = cg * sb * ca + sg * sa;
    let hy = cg * sb * sa - sg * ca;
    let hz = cg * cb;
    let m = b * wx * cg + wy * sg;
    let m_g = -b * wx * sg + wy * cg;

    let mut f = DVector::zeros(NX);
    f[0] = x[1];
    f[1] = a * hx;
    f[2] = x[3];
    f[3] = a * hy;
    f[4] = x[5];
    f[5] = a * hz - g;
    f[6] = m / cb;
    f[7] = -b * wx * sg + wy * cg;
    f[8] = m * tb + wz;

    let mut fx = DMatrix::zeros(NX, NX);
    fx[(0, 1)] = 1.0;
    fx[(2, 3)] = 1.0;
    fx[(4, 5)] = 1.0;
    fx[(1, 6)] = a * (-sg * sb * ca + cg * sa);
    fx[(1, 7)] = a * cg * cb * ca;
    fx[(1, 8)] = a * (-cg * sb * sa + sg * ca);
    fx[(3, 6)] = a * (-sg * sb * sa - cg * ca);
    fx[(3, 7)] = a * cg * cb * sa;
    fx[(3, 8)] = a * (cg * sb * ca + sg * sa);
    fx[(5, 6)] = -a * sg * cb;
    fx[(5, 7)] = -a * cg * sb;
    fx[(6, 6)] = m_g / cb;
    fx[(6, 7)] = m * sb / (cb * cb);
    fx[(7, 6)] = -m;
    fx[(8, 6)] = m_g * tb;
    fx[(8, 7)] = m / (cb * cb);

    let mut fu = DMatrix::zeros(NX, NU);
    fu[(1, 0)] = hx;
    fu[(3, 0)] = hy;
    fu[(5, 0)] = hz;
    fu[(6, 1)] = b * cg / cb;
    fu[(6, 2)] = sg / cb;
    fu[(7, 1)] = -b * sg;
    fu[(7, 2)] = cg;
    fu[(8, 1)] = b * cg * tb;
    fu[(8, 2)] = sg * tb;
    fu[(8, 3)] = 1.0;
    (f, fx, fu)
}

const COS_FLOOR: f64 = 1e-9;

/// Time derivative of the state.
pub fn quadrotor_continuous_rhs(
    x: &DVector<f64>,
    u: &DVector<f64>,
    params: &QuadrotorParams,
) -> Result<DVector<f64>> {
    crate::error::check_len("quadrotor state", NX, x.len())?;
    crate::error::check_len("quadrotor control", NU, u.len())?;
    if x[7].cos().abs() < COS_FLOOR {
        return Err(Error::Singularity(format!(
            "pitch {} makes the attitude kinematics singular",
            x[7]
        )));
    }
    Ok(rhs_with_jacobian(x, u, params.b, params.g).0)
}

/// One classical Runge-Kutta step and its Jacobian `[d/dx, d/du]`
/// (`NX x (NX + NU)`), obtained by differentiating every stage of the scheme.
/// Entries are NaN if an intermediate stage hits the pitch singularity.
pub fn rk4_step(
    x: &DVector<f64>,
    u: &DVector<f64>,
    b: f64,
    g: f64,
    dt: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let eye = DMatrix::<f64>::identity(NX, NX);
    let singular = |s: &DVector<f64>| s[7].cos().abs() < COS_FLOOR;
    let nan = || {
        (
            DVector::from_element(NX, f64::NAN),
            DMatrix::from_element(NX, NX + NU, f64::NAN),
        )
    };

    let mut slope = DVector::zeros(NX);
    let mut slope_x = DMatrix::zeros(NX, NX);
    let mut slope_u = DMatrix::zeros(NX, NU);
    let mut sum = DVector::zeros(NX);
    let mut sum_x = DMatrix::zeros(NX, NX);
    let mut sum_u = DMatrix::zeros(NX, NU);
    for (c, weight) in [(0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)] {
        let h = c * dt;
        let stage_x = x + &slope * h;
        if singular(&stage_x) {
            return nan();
        }
        let (kf, fx, fu) = rhs_with_jacobian(&stage_x, u, b, g);
        let kx = &fx * (&eye + &slope_x * h);
        let ku = &fx * (&slope_u * h) + fu;
        sum += &kf * weight;
        sum_x += &kx * weight;
        sum_u += &ku * weight;
        slope = kf;
        slope_x = kx;
        slope_u = ku;
    }
    let next = x + &sum * (dt / 6.0);
    let mut jac = DMatrix::zeros(NX, NX + NU);
    jac.view_mut((0, 0), (NX, NX))
        .copy_from(&(&eye + &sum_x * (dt / 6.0)));
    jac.view_mut((0, NX), (NX, NU))
        .copy_from(&(&sum_u * (dt / 6.0)));
    (next, jac)
}

fn dynamics(params: &QuadrotorParams) -> Dynamics {
    let (b, g, dt) = (params.b, params.g, params.dt);
    Dynamics::new(move |x, u, _| rk4_step(x, u, b, g, dt).0).with_jacobian(move |x, u, d| {
        let (_, j) = rk4_step(x, u, b, g, dt);
        let mut full = DMatrix::zeros(NX, NX + NU + d.len());
        full.view_mut((0, 0), (NX, NX + NU)).copy_from(&j);
        full
    })
}

/// Hover-regulation problem: references and initial state at the hover
/// point, warm start at the steady state of the stage problem.
pub fn quadrotor_problem(params: &QuadrotorParams) -> Result<ModelInstance> {
    params.validate()?;
    let n = params.horizon;
    let dims = Dimensions::uniform(n, NX, NU, NX, NX)?;
    let cost = tracking_cost(
        quadrotor_state_weights(params.q),
        DMatrix::identity(NU, NU),
        1.0,
    );
    let terminal = tracking_cost(DMatrix::identity(NX, NX), DMatrix::zeros(0, 0), 1.0);
    let dynamics = dynamics(params);
    let hover = params.hover_state();

    let ss = solve_steady_state(
        &cost,
        &dynamics,
        &hover,
        &hover,
        &params.hover_control(),
        &SolveOptions::default(),
    )?;
    let problem = DOProblem::new(
        dims.clone(),
        StageOracles::time_invariant(n, cost, dynamics, terminal),
        DMatrix::identity(NX, NX),
    )?;
    let mut data = DataTrajectory::zeros(&dims);
    for j in -1..=n as isize {
        *data.stage_mut(j) = hover.clone();
    }
    let warm_start = PrimalDualTrajectory::constant(&dims, &ss.x, &ss.u, &ss.lambda, &ss.lambda);
    Ok(ModelInstance {
        problem,
        data,
        warm_start,
    })
}

use nalgebra::{DMatrix, DVector};

use crate::diff::{self, StageLayout};
use crate::error::{Error, Result};
use crate::kkt::SolveOptions;
use crate::problem::{
    DOProblem, DataTrajectory, Dimensions, Dynamics, PrimalDualTrajectory, StageCost, StageOracles,
};

/// Primal-dual solution of `min l(x, u; d) s.t. x = f(x, u; d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub lambda: DVector<f64>,
}

struct SteadyEval {
    residual: DVector<f64>,
}

fn steady_residual(
    cost: &StageCost,
    dynamics: &Dynamics,
    layout: StageLayout,
    d: &DVector<f64>,
    v: &DVector<f64>,
    opts: &crate::problem::DiffSettings,
) -> Result<SteadyEval> {
    let (nx, nu) = (layout.nx, layout.nu);
    let x = v.rows(0, nx).into_owned();
    let u = v.rows(nx, nu).into_owned();
    let lambda = v.rows(nx + nu, nx).into_owned();
    let g = diff::cost_gradient(cost, layout, &x, &u, d, &opts.first)?;
    let jac = diff::dynamics_jacobian(dynamics, layout, &x, &u, d, &opts.first)?;
    let jl = jac.tr_mul(&lambda);
    let mut r = DVector::zeros(2 * nx + nu);
    r.rows_mut(0, nx)
        .copy_from(&(g.rows(0, nx) + jl.rows(0, nx) - &lambda));
    r.rows_mut(nx, nu)
        .copy_from(&(g.rows(nx, nu) + jl.rows(nx, nu)));
    r.rows_mut(nx + nu, nx)
        .copy_from(&(dynamics.value(&x, &u, d) - &x));
    crate::problem::finite("steady-state residual", &r)?;
    Ok(SteadyEval { residual: r })
}

/// Newton's method on the steady-state optimality conditions
/// `grad_x l - lambda + A^T lambda = 0`, `grad_u l + B^T lambda = 0`,
/// `f(x, u) = x`, started from `(x0, u0, 0)`. Steps are minimum-norm least
/// squares solutions, so a non-isolated steady state is approached along the
/// shortest path from the start.
pub fn solve_steady_state(
    cost: &StageCost,
    dynamics: &Dynamics,
    d: &DVector<f64>,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SteadyState> {
    opts.validate()?;
    let (nx, nu) = (x0.len(), u0.len());
    let layout = StageLayout {
        nx,
        nu,
        nd: d.len(),
    };
    let settings = crate::problem::DiffSettings::default();
    let n = 2 * nx + nu;
    let mut v = DVector::zeros(n);
    v.rows_mut(0, nx).copy_from(x0);
    v.rows_mut(nx, nu).copy_from(u0);
    let mut eval = steady_residual(cost, dynamics, layout, d, &v, &settings)?;
    for _ in 0..opts.max_iter {
        let norm = eval.residual.amax();
        if norm <= opts.tol_kkt {
            return Ok(SteadyState {
                x: v.rows(0, nx).into_owned(),
                u: v.rows(nx, nu).into_owned(),
                lambda: v.rows(nx + nu, nx).into_owned(),
            });
        }
        let x = v.rows(0, nx).into_owned();
        let u = v.rows(nx, nu).into_owned();
        let lambda = v.rows(nx + nu, nx).into_owned();
        let mut h = diff::cost_hessian(cost, layout, &x, &u, d, &settings.second)?;
        h += diff::weighted_dynamics_hessian(
            dynamics,
            &lambda,
            layout,
            &x,
            &u,
            d,
            &settings.second,
        )?;
        let jac = diff::dynamics_jacobian(dynamics, layout, &x, &u, d, &settings.first)?;
        let nz = nx + nu;
        let mut fx = jac.columns(0, nz).into_owned();
        for k in 0..nx {
            fx[(k, k)] -= 1.0;
        }
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (nz, nz))
            .copy_from(&h.view((0, 0), (nz, nz)));
        m.view_mut((0, nz), (nz, nx)).copy_from(&fx.transpose());
        m.view_mut((nz, 0), (nx, nz)).copy_from(&fx);
        // Minimum-norm step: steady states need not be isolated (e.g. an
        // unweighted integrator state), which leaves this matrix singular.
        let scale = m.amax().max(1.0);
        let step = m
            .svd(true, true)
            .solve(&(-&eval.residual), 1e-12 * scale)
            .map_err(|e| Error::Regularity(format!("steady-state KKT solve failed: {e}")))?;

        let merit = 0.5 * eval.residual.norm_squared();
        let mut alpha = 1.0;
        let mut next = None;
        while alpha >= 1e-10 {
            let trial = &v + &step * alpha;
            if let Ok(e) = steady_residual(cost, dynamics, layout, d, &trial, &settings) {
                if 0.5 * e.residual.norm_squared() <= (1.0 - 2.0 * opts.ls_sigma * alpha) * merit {
                    next = Some((trial, e));
                    break;
                }
            }
            alpha *= opts.ls_beta;
        }
        match next {
            Some((trial, e)) => {
                v = trial;
                eval = e;
            }
            None => break,
        }
    }
    let dims = Dimensions::uniform(1, nx, nu, 0, d.len())?;
    let mut last = PrimalDualTrajectory::zeros(&dims);
    last.x[0] = v.rows(0, nx).into_owned();
    last.u[0] = v.rows(nx, nu).into_owned();
    last.lambda[0] = v.rows(nx + nu, nx).into_owned();
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: eval.residual.amax(),
        last: Box::new(last),
    })
}

/// Boundary costs that make the constant steady-state trajectory optimal for
/// every horizon.
#[derive(Clone)]
pub struct TiCosts {
    /// `l_b(x) = -((I - T^+ T) lambda^s)^T x`, added to the stage-0 cost.
    pub initial: StageCost,
    /// `l_f(x) = (x - x^s)^T Q (x - x^s) + (lambda^s)^T x`.
    pub terminal: StageCost,
    /// Gradient of `l_b`.
    pub lambda_b: DVector<f64>,
    /// Solution of `T^T lambda_{-1} = lambda_b + lambda^s`.
    pub lambda_init: DVector<f64>,
}

impl std::fmt::Debug for TiCosts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TiCosts")
            .field("lambda_b", &self.lambda_b)
            .field("lambda_init", &self.lambda_init)
            .finish_non_exhaustive()
    }
}

pub fn build_ti_costs(ss: &SteadyState, q: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<TiCosts> {
    let nx = ss.x.len();
    if q.shape() != (nx, nx) || t.ncols() != nx {
        return Err(Error::Dimension {
            context: "steady-state cost weights",
            expected: nx,
            actual: q.nrows(),
        });
    }
    let n0 = t.nrows();
    let t_pinv = if n0 == 0 {
        DMatrix::zeros(nx, 0)
    } else {
        t.clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Regularity(e.to_string()))?
    };
    let projector = DMatrix::identity(nx, nx) - &t_pinv * t;
    let lambda_b = -(&projector * &ss.lambda);
    let target = &lambda_b + &ss.lambda;
    let lambda_init = t_pinv.tr_mul(&target);
    let residual = (t.tr_mul(&lambda_init) - &target).amax();
    let tolerance = 1e-8 * target.amax().max(1.0);
    if residual > tolerance {
        return Err(Error::RangeCondition {
            residual,
            tolerance,
        });
    }

    let slope = lambda_b.clone();
    let slope_g = lambda_b.clone();
    let initial = StageCost::new(move |x, _, _| slope.dot(x))
        .with_gradient(move |x, u, d| {
            let mut g = DVector::zeros(x.len() + u.len() + d.len());
            g.rows_mut(0, x.len()).copy_from(&slope_g);
            g
        })
        .with_hessian(|x, u, d| {
            let n = x.len() + u.len() + d.len();
            DMatrix::zeros(n, n)
        });

    let (xs, ls, qv) = (ss.x.clone(), ss.lambda.clone(), q.clone());
    let (xs_g, ls_g, q_g) = (ss.x.clone(), ss.lambda.clone(), q.clone());
    let q_h = q * 2.0;
    let terminal = StageCost::new(move |x, _, _| {
        let e = x - &xs;
        e.dot(&(&qv * &e)) + ls.dot(x)
    })
    .with_gradient(move |x, u, d| {
        let mut g = DVector::zeros(x.len() + u.len() + d.len());
        g.rows_mut(0, x.len())
            .copy_from(&(&q_g * (x - &xs_g) * 2.0 + &ls_g));
        g
    })
    .with_hessian(move |x, u, d| {
        let n = x.len() + u.len() + d.len();
        let mut h = DMatrix::zeros(n, n);
        h.view_mut((0, 0), (x.len(), x.len())).copy_from(&q_h);
        h
    });

    Ok(TiCosts {
        initial,
        terminal,
        lambda_b,
        lambda_init,
    })
}

fn add_costs(a: StageCost, b: StageCost) -> StageCost {
    let (av, bv) = (a.clone(), b.clone());
    let mut sum = StageCost::new(move |x, u, d| av.value(x, u, d) + bv.value(x, u, d));
    if a.gradient_fn().is_some() && b.gradient_fn().is_some() {
        let (ag, bg) = (a.clone(), b.clone());
        sum = sum.with_gradient(move |x, u, d| {
            ag.gradient_fn().unwrap()(x, u, d) + bg.gradient_fn().unwrap()(x, u, d)
        });
    }
    if a.hessian_fn().is_some() && b.hessian_fn().is_some() {
        sum = sum.with_hessian(move |x, u, d| {
            a.hessian_fn().unwrap()(x, u, d) + b.hessian_fn().unwrap()(x, u, d)
        });
    }
    sum
}

/// Time-invariant problem with `l_0 = l + l_b`, `l_i = l`, `l_N = l_f`.
pub fn time_invariant_problem(
    dims: Dimensions,
    cost: &StageCost,
    dynamics: &Dynamics,
    ti: &TiCosts,
    t: DMatrix<f64>,
) -> Result<DOProblem> {
    let mut oracles = StageOracles::time_invariant(
        dims.horizon,
        cost.clone(),
        dynamics.clone(),
        ti.terminal.clone(),
    );
    oracles.costs[0] = add_costs(cost.clone(), ti.initial.clone());
    DOProblem::new(dims, oracles, t)
}

/// `[lambda_{-1}^s; w^s; ...; w^s; x^s]`.
pub fn steady_trajectory(
    dims: &Dimensions,
    ss: &SteadyState,
    ti: &TiCosts,
) -> PrimalDualTrajectory {
    PrimalDualTrajectory::constant(dims, &ss.x, &ss.u, &ss.lambda, &ti.lambda_init)
}

/// `[T x^s; d^s; ...; d^s]`.
pub fn steady_data(
    dims: &Dimensions,
    t: &DMatrix<f64>,
    ss: &SteadyState,
    d_s: &DVector<f64>,
) -> DataTrajectory {
    let mut d = DataTrajectory::zeros(dims);
    *d.stage_mut(-1) = t * &ss.x;
    for j in 0..=dims.horizon as isize {
        if dims.nd(j) == d_s.len() {
            *d.stage_mut(j) = d_s.clone();
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::kkt_residual;
    use crate::models::{linear_dynamics, tracking_cost};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn scalar_origin() {
        let cost = StageCost::new(|x, u, _| x[0] * x[0] + u[0] * u[0]);
        let dynamics = Dynamics::new(|x, u, _| v(&[0.5 * x[0] + u[0]]));
        let ss = solve_steady_state(
            &cost,
            &dynamics,
            &v(&[]),
            &v(&[0.3]),
            &v(&[-0.2]),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(ss.x.amax() < 1e-9 && ss.u.amax() < 1e-9 && ss.lambda.amax() < 1e-9);
    }

    #[test]
    fn shifted_reference_matches_linear_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let cost = tracking_cost(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.5);
        let dynamics = linear_dynamics(a.clone(), b.clone());
        let ds = v(&[1.0, 0.5]);
        let ss = solve_steady_state(
            &cost,
            &dynamics,
            &ds,
            &v(&[0.0, 0.0]),
            &v(&[0.0]),
            &SolveOptions::default(),
        )
        .unwrap();
        // [I 0 A^T-I; 0 I B^T; A-I B 0] [x; u; lambda] = [d; 0; 0]
        let mut m = DMatrix::zeros(5, 5);
        let ai = &a - DMatrix::identity(2, 2);
        m.view_mut((0, 0), (3, 3)).fill_with_identity();
        m.view_mut((0, 3), (2, 2)).copy_from(&ai.transpose());
        m.view_mut((2, 3), (1, 2)).copy_from(&b.transpose());
        m.view_mut((3, 0), (2, 2)).copy_from(&ai);
        m.view_mut((3, 2), (2, 1)).copy_from(&b);
        let sol = m.lu().solve(&v(&[1.0, 0.5, 0.0, 0.0, 0.0])).unwrap();
        assert!((&ss.x - sol.rows(0, 2)).amax() < 1e-9);
        assert!((&ss.u - sol.rows(2, 1)).amax() < 1e-9);
        assert!((&ss.lambda - sol.rows(3, 2)).amax() < 1e-9);
        assert!((&ss.x - v(&[1.0, 0.0])).amax() < 1e-9);
        assert!((&ss.lambda - v(&[0.5, 0.0])).amax() < 1e-9);
    }

    #[test]
    fn boundary_costs_examples() {
        let ss = SteadyState {
            x: v(&[0.0, 0.0]),
            u: v(&[0.0]),
            lambda: v(&[2.0, -3.0]),
        };
        let q = DMatrix::identity(2, 2);
        let ti = build_ti_costs(&ss, &q, &DMatrix::identity(2, 2)).unwrap();
        assert!(ti.lambda_b.amax() < 1e-14);
        assert!((&ti.lambda_init - &ss.lambda).amax() < 1e-12);
        let ti = build_ti_costs(&ss, &q, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        assert!((&ti.lambda_b - v(&[0.0, 3.0])).amax() < 1e-12);
        assert!((&ti.lambda_init - v(&[2.0])).amax() < 1e-12);
        let g = ti.initial.gradient_fn().unwrap()(&v(&[0.4, 0.1]), &v(&[0.0]), &v(&[]));
        assert!((g.rows(0, 2) - v(&[0.0, 3.0])).amax() < 1e-12);

        let zero = SteadyState {
            lambda: v(&[0.0, 0.0]),
            ..ss
        };
        let ti = build_ti_costs(&zero, &q, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(ti.lambda_init, v(&[0.0, 0.0]));
        assert_eq!(ti.initial.value(&v(&[5.0, 7.0]), &v(&[0.0]), &v(&[])), 0.0);
        let x = v(&[1.0, 2.0]);
        assert!((ti.terminal.value(&x, &v(&[]), &v(&[])) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn steady_trajectory_is_stationary_with_partial_initial_map() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let cost = tracking_cost(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.5);
        let dynamics = linear_dynamics(a, b);
        let ds = v(&[1.0, 0.5]);
        let ss = solve_steady_state(
            &cost,
            &dynamics,
            &ds,
            &v(&[0.0, 0.0]),
            &v(&[0.0]),
            &SolveOptions::default(),
        )
        .unwrap();
        let t = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let ti = build_ti_costs(&ss, &DMatrix::identity(2, 2), &t).unwrap();
        let dims = Dimensions::uniform(12, 2, 1, 1, 2).unwrap();
        let p = time_invariant_problem(dims.clone(), &cost, &dynamics, &ti, t.clone()).unwrap();
        let w = steady_trajectory(&dims, &ss, &ti);
        let d = steady_data(&dims, &t, &ss, &ds);
        assert!(kkt_residual(&p, &w, &d).unwrap().amax() <= 1e-8);
    }
}

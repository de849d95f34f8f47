use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{linear_dynamics, tracking_cost, ModelInstance};
use crate::error::{Error, Result};
use crate::problem::{DOProblem, DataTrajectory, Dimensions, PrimalDualTrajectory, StageOracles};

/// Matrices of a time-invariant LQ problem with stage cost
/// `1/2 (x - d)^T Q (x - d) + 1/2 u^T R u` and terminal `1/2 (x - d)^T Q_f (x - d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

impl LqMatrices {
    /// `Q = Q_f = I`, `R = I`, `T = I`.
    pub fn identity_weights(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let nx = a.nrows();
        let nu = b.ncols();
        Self {
            a,
            b,
            q: DMatrix::identity(nx, nx),
            r: DMatrix::identity(nu, nu),
            q_terminal: DMatrix::identity(nx, nx),
            t: DMatrix::identity(nx, nx),
        }
    }

    fn validate(&self) -> Result<()> {
        let nx = self.a.nrows();
        let nu = self.b.ncols();
        let ok = self.a.is_square()
            && self.b.nrows() == nx
            && self.q.shape() == (nx, nx)
            && self.q_terminal.shape() == (nx, nx)
            && self.r.shape() == (nu, nu)
            && self.t.ncols() == nx;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("inconsistent LQ matrix shapes".into()))
        }
    }
}

/// LQ problem whose stage data are state references and whose initial data
/// enter through `T x_0 = d_{-1}`.
pub fn lq_problem(m: &LqMatrices, horizon: usize) -> Result<DOProblem> {
    m.validate()?;
    let nx = m.a.nrows();
    let nu = m.b.ncols();
    let dims = Dimensions::uniform(horizon, nx, nu, m.t.nrows(), nx)?;
    let oracles = StageOracles::time_invariant(
        horizon,
        tracking_cost(m.q.clone(), m.r.clone(), 0.5),
        linear_dynamics(m.a.clone(), m.b.clone()),
        tracking_cost(m.q_terminal.clone(), DMatrix::zeros(0, 0), 0.5),
    );
    DOProblem::new(dims, oracles, m.t.clone())
}

fn instance(m: &LqMatrices, horizon: usize, init: DVector<f64>) -> Result<ModelInstance> {
    let problem = lq_problem(m, horizon)?;
    let mut data = DataTrajectory::zeros(&problem.dims);
    *data.stage_mut(-1) = init;
    let warm_start = PrimalDualTrajectory::zeros(&problem.dims);
    Ok(ModelInstance {
        problem,
        data,
        warm_start,
    })
}

/// `min x_0^2 + u_0^2 + x_1^2` s.t. `x_0 = 1`, `x_1 = x_0 + u_0`.
pub fn scalar_oracle() -> ModelInstance {
    let one = DMatrix::from_element(1, 1, 1.0);
    let two = DMatrix::from_element(1, 1, 2.0);
    let m = LqMatrices {
        a: one.clone(),
        b: one.clone(),
        q: two.clone(),
        r: two.clone(),
        q_terminal: two,
        t: one,
    };
    instance(&m, 1, DVector::from_element(1, 1.0)).expect("fixed shapes are consistent")
}

pub fn double_integrator(horizon: usize) -> Result<ModelInstance> {
    let m = LqMatrices::identity_weights(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    );
    instance(&m, horizon, DVector::from_vec(vec![1.0, 0.0]))
}

/// Seeded random `(A, B)` with `A` rescaled to the given spectral radius;
/// identity weights and initial map; `d_{-1}` is the all-ones vector.
pub fn lq_chain(
    nx: usize,
    nu: usize,
    horizon: usize,
    spectral_radius: f64,
    seed: u64,
) -> Result<ModelInstance> {
    if !(spectral_radius >= 0.0 && spectral_radius.is_finite()) {
        return Err(Error::Config(
            "spectral radius must be finite and nonnegative".into(),
        ));
    }
    if nx == 0 {
        return Err(Error::Config("state dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let a0: DMatrix<f64> = draw(nx, nx);
    let b = draw(nx, nu);
    let radius = a0
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let a = if radius > 0.0 {
        a0 * (spectral_radius / radius)
    } else {
        a0
    };
    instance(
        &LqMatrices::identity_weights(a, b),
        horizon,
        DVector::from_element(nx, 1.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{controllability_matrix, scan_uniform_controllability};
    use crate::kkt::{linearize, solve_equality_nlp, SolveOptions};

    #[test]
    fn scalar_oracle_solution_and_duals() {
        let inst = scalar_oracle();
        let rep = solve_equality_nlp(
            &inst.problem,
            &inst.data,
            &inst.warm_start,
            &SolveOptions::default(),
        )
        .unwrap();
        let w = &rep.solution;
        assert!((w.x[0][0] - 1.0).abs() < 1e-12);
        assert!((w.u[0][0] + 0.5).abs() < 1e-12);
        assert!((w.x[1][0] - 0.5).abs() < 1e-12);
        assert!((w.lambda_init[0] - 3.0).abs() < 1e-12);
        assert!((w.lambda[0][0] - 1.0).abs() < 1e-12);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn chain_is_deterministic_and_scaled() {
        let a = lq_chain(3, 2, 5, 0.8, 11).unwrap();
        let b = lq_chain(3, 2, 5, 0.8, 11).unwrap();
        let w = PrimalDualTrajectory::zeros(&a.problem.dims);
        let ba = linearize(&a.problem, &w, &a.data).unwrap();
        let bb = linearize(&b.problem, &w, &b.data).unwrap();
        assert_eq!(ba, bb);
        let radius = ba.a[0]
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!((radius - 0.8).abs() < 1e-10);
    }

    #[test]
    fn chain_without_controls_is_uncontrollable() {
        let inst = lq_chain(2, 0, 6, 0.9, 3).unwrap();
        let w = PrimalDualTrajectory::zeros(&inst.problem.dims);
        let blocks = linearize(&inst.problem, &w, &inst.data).unwrap();
        assert_eq!(
            scan_uniform_controllability(&blocks, 2).unwrap().minimum,
            0.0
        );
    }

    #[test]
    fn double_integrator_gramian() {
        let inst = double_integrator(4).unwrap();
        let w = PrimalDualTrajectory::zeros(&inst.problem.dims);
        let blocks = linearize(&inst.problem, &w, &inst.data).unwrap();
        let c = controllability_matrix(&blocks, 0, 1).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        let scan = scan_uniform_controllability(&blocks, 1).unwrap();
        assert!((scan.minimum - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }
}

//! Horizon-N dynamic optimization problems, their trajectories, and
//! evaluation of objective, constraints and Lagrangian.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::diff::FdConfig;
use crate::error::{check_len, Error, Result};

pub type ScalarFn = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
pub type VectorFn =
    dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
pub type MatrixFn =
    dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Stage (or terminal) cost `l(x, u; d)`.
///
/// Derivatives are taken with respect to the stacked variable `v = [x; u; d]`.
/// The terminal cost is evaluated with an empty `u`.
#[derive(Clone)]
pub struct StageCost {
    value: Arc<ScalarFn>,
    gradient: Option<Arc<VectorFn>>,
    hessian: Option<Arc<MatrixFn>>,
}

impl StageCost {
    pub fn new<F>(value: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            gradient: None,
            hessian: None,
        }
    }

    /// Registers an analytic gradient with respect to `[x; u; d]`.
    pub fn with_gradient<F>(mut self, gradient: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    /// Registers an analytic Hessian with respect to `[x; u; d]`.
    pub fn with_hessian<F>(mut self, hessian: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn value(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> f64 {
        (self.value)(x, u, d)
    }

    pub fn gradient_fn(&self) -> Option<&VectorFn> {
        self.gradient.as_deref()
    }

    pub fn hessian_fn(&self) -> Option<&MatrixFn> {
        self.hessian.as_deref()
    }
}

impl fmt::Debug for StageCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageCost")
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_hessian", &self.hessian.is_some())
            .finish()
    }
}

/// Stage dynamics `x_{i+1} = f(x_i, u_i; d_i)`.
#[derive(Clone)]
pub struct Dynamics {
    value: Arc<VectorFn>,
    jacobian: Option<Arc<MatrixFn>>,
}

impl Dynamics {
    pub fn new<F>(value: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            jacobian: None,
        }
    }

    /// Registers an analytic Jacobian, `n_x x (n_x + n_u + n_d)`, columns ordered `[x; u; d]`.
    pub fn with_jacobian<F>(mut self, jacobian: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn value(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        (self.value)(x, u, d)
    }

    pub fn jacobian_fn(&self) -> Option<&MatrixFn> {
        self.jacobian.as_deref()
    }
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dynamics")
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

/// Problem sizes. Data sizes are stage dependent; the initial-condition data
/// `d_{-1}` always has `n0` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimensions {
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
    pub n0: usize,
    nd: Vec<usize>,
}

impl Dimensions {
    /// `stage_data[i]` is the data size of stage `i` for `i` in `0..=horizon`.
    pub fn new(
        horizon: usize,
        nx: usize,
        nu: usize,
        n0: usize,
        stage_data: Vec<usize>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if nx == 0 {
            return Err(Error::Config("state dimension must be at least 1".into()));
        }
        if n0 > nx {
            return Err(Error::Config(format!(
                "initial map has {n0} rows but only {nx} states"
            )));
        }
        check_len("stage data sizes", horizon + 1, stage_data.len())?;
        let mut nd = Vec::with_capacity(horizon + 2);
        nd.push(n0);
        nd.extend(stage_data);
        Ok(Self {
            horizon,
            nx,
            nu,
            n0,
            nd,
        })
    }

    pub fn uniform(horizon: usize, nx: usize, nu: usize, n0: usize, nd: usize) -> Result<Self> {
        Self::new(horizon, nx, nu, n0, vec![nd; horizon + 1])
    }

    /// Data size at stage `j` in `-1..=N`.
    pub fn nd(&self, stage: isize) -> usize {
        self.nd[(stage + 1) as usize]
    }

    pub fn primal_len(&self) -> usize {
        (self.horizon + 1) * self.nx + self.horizon * self.nu
    }

    pub fn dual_len(&self) -> usize {
        self.n0 + self.horizon * self.nx
    }

    pub fn data_len(&self) -> usize {
        self.nd.iter().sum()
    }

    /// Offset of `x_i` in the primal vector `[x_0; u_0; x_1; ...; x_N]`.
    pub fn x_offset(&self, i: usize) -> usize {
        i * (self.nx + self.nu)
    }

    pub fn u_offset(&self, i: usize) -> usize {
        i * (self.nx + self.nu) + self.nx
    }

    /// Offset of `lambda_i` (`i` in `-1..N`) in the dual vector.
    pub fn lambda_offset(&self, i: isize) -> usize {
        if i < 0 {
            0
        } else {
            self.n0 + i as usize * self.nx
        }
    }

    /// Offset of `d_j` (`j` in `-1..=N`) in the stacked data vector.
    pub fn data_offset(&self, stage: isize) -> usize {
        self.nd[..(stage + 1) as usize].iter().sum()
    }
}

/// Data trajectory `d_{-1:N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTrajectory {
    stages: Vec<DVector<f64>>,
}

impl DataTrajectory {
    /// `init` is `d_{-1}`; `stages` holds `d_0 .. d_N`.
    pub fn new(init: DVector<f64>, stages: Vec<DVector<f64>>) -> Self {
        let mut all = Vec::with_capacity(stages.len() + 1);
        all.push(init);
        all.extend(stages);
        Self { stages: all }
    }

    pub fn zeros(dims: &Dimensions) -> Self {
        let stages = (-1..=dims.horizon as isize)
            .map(|j| DVector::zeros(dims.nd(j)))
            .collect();
        Self { stages }
    }

    pub fn stage(&self, j: isize) -> &DVector<f64> {
        &self.stages[(j + 1) as usize]
    }

    pub fn stage_mut(&mut self, j: isize) -> &mut DVector<f64> {
        &mut self.stages[(j + 1) as usize]
    }

    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(2)
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        check_len(
            "data trajectory length",
            dims.horizon + 2,
            self.stages.len(),
        )?;
        for j in -1..=dims.horizon as isize {
            check_len("data stage size", dims.nd(j), self.stage(j).len())?;
        }
        Ok(())
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let n: usize = self.stages.iter().map(|v| v.len()).sum();
        DVector::from_iterator(n, self.stages.iter().flat_map(|v| v.iter().copied()))
    }
}

/// Primal-dual trajectory `w_{-1:N}`.
///
/// Stage blocks follow `w_i = [x_i; u_i; lambda_i]` with `x_{-1}`, `u_{-1}`,
/// `u_N` and `lambda_N` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualTrajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub lambda_init: DVector<f64>,
    pub lambda: Vec<DVector<f64>>,
}

impl PrimalDualTrajectory {
    pub fn zeros(dims: &Dimensions) -> Self {
        Self {
            x: vec![DVector::zeros(dims.nx); dims.horizon + 1],
            u: vec![DVector::zeros(dims.nu); dims.horizon],
            lambda_init: DVector::zeros(dims.n0),
            lambda: vec![DVector::zeros(dims.nx); dims.horizon],
        }
    }

    /// Trajectory with every stage equal to `(x, u, lambda)`; used for
    /// steady-state warm starts.
    pub fn constant(
        dims: &Dimensions,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
        lambda_init: &DVector<f64>,
    ) -> Self {
        Self {
            x: vec![x.clone(); dims.horizon + 1],
            u: vec![u.clone(); dims.horizon],
            lambda_init: lambda_init.clone(),
            lambda: vec![lambda.clone(); dims.horizon],
        }
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        check_len("state trajectory length", dims.horizon + 1, self.x.len())?;
        check_len("control trajectory length", dims.horizon, self.u.len())?;
        check_len(
            "multiplier trajectory length",
            dims.horizon,
            self.lambda.len(),
        )?;
        check_len("initial multiplier size", dims.n0, self.lambda_init.len())?;
        for x in &self.x {
            check_len("state size", dims.nx, x.len())?;
        }
        for u in &self.u {
            check_len("control size", dims.nu, u.len())?;
        }
        for l in &self.lambda {
            check_len("multiplier size", dims.nx, l.len())?;
        }
        Ok(())
    }

    /// Stacked `[x_0; u_0; ...; x_N]`.
    pub fn primal(&self) -> DVector<f64> {
        let n = self.x.len() * self.x[0].len() + self.u.iter().map(|u| u.len()).sum::<usize>();
        let mut out = Vec::with_capacity(n);
        for (i, x) in self.x.iter().enumerate() {
            out.extend(x.iter().copied());
            if let Some(u) = self.u.get(i) {
                out.extend(u.iter().copied());
            }
        }
        DVector::from_vec(out)
    }

    /// Stacked `[lambda_{-1}; lambda_0; ...; lambda_{N-1}]`.
    pub fn dual(&self) -> DVector<f64> {
        let mut out: Vec<f64> = self.lambda_init.iter().copied().collect();
        for l in &self.lambda {
            out.extend(l.iter().copied());
        }
        DVector::from_vec(out)
    }

    /// Stacked `[primal; dual]`.
    pub fn to_flat(&self) -> DVector<f64> {
        let p = self.primal();
        let d = self.dual();
        DVector::from_iterator(p.len() + d.len(), p.iter().chain(d.iter()).copied())
    }

    pub fn from_flat(dims: &Dimensions, flat: &DVector<f64>) -> Result<Self> {
        check_len(
            "flat primal-dual vector",
            dims.primal_len() + dims.dual_len(),
            flat.len(),
        )?;
        let np = dims.primal_len();
        let x = (0..=dims.horizon)
            .map(|i| flat.rows(dims.x_offset(i), dims.nx).into_owned())
            .collect();
        let u = (0..dims.horizon)
            .map(|i| flat.rows(dims.u_offset(i), dims.nu).into_owned())
            .collect();
        let lambda_init = flat.rows(np, dims.n0).into_owned();
        let lambda = (0..dims.horizon)
            .map(|i| {
                flat.rows(np + dims.lambda_offset(i as isize), dims.nx)
                    .into_owned()
            })
            .collect();
        Ok(Self {
            x,
            u,
            lambda_init,
            lambda,
        })
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Stage block `w_i` for `i` in `-1..=N`.
    pub fn block(&self, i: isize) -> DVector<f64> {
        if i < 0 {
            return self.lambda_init.clone();
        }
        let i = i as usize;
        let mut out: Vec<f64> = self.x[i].iter().copied().collect();
        if let Some(u) = self.u.get(i) {
            out.extend(u.iter().copied());
        }
        if let Some(l) = self.lambda.get(i) {
            out.extend(l.iter().copied());
        }
        DVector::from_vec(out)
    }

    /// Primal part of `w_i` (`[x_i; u_i]`, empty at `i = -1`).
    pub fn primal_block(&self, i: isize) -> DVector<f64> {
        if i < 0 {
            return DVector::zeros(0);
        }
        let i = i as usize;
        let mut out: Vec<f64> = self.x[i].iter().copied().collect();
        if let Some(u) = self.u.get(i) {
            out.extend(u.iter().copied());
        }
        DVector::from_vec(out)
    }
}

/// Derivative settings used when oracles lack analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffSettings {
    pub first: FdConfig,
    pub second: FdConfig,
}

impl Default for DiffSettings {
    fn default() -> Self {
        Self {
            first: FdConfig::first_order(),
            second: FdConfig::second_order(),
        }
    }
}

/// Stage cost and dynamics oracles of a problem.
#[derive(Debug, Clone)]
pub struct StageOracles {
    pub costs: Vec<StageCost>,
    pub dynamics: Vec<Dynamics>,
    pub terminal: StageCost,
}

impl StageOracles {
    pub fn time_invariant(
        horizon: usize,
        cost: StageCost,
        dynamics: Dynamics,
        terminal: StageCost,
    ) -> Self {
        Self {
            costs: vec![cost; horizon],
            dynamics: vec![dynamics; horizon],
            terminal,
        }
    }
}

/// The problem `P_{0:N}(d)`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DOProblem {
    pub dims: Dimensions,
    pub oracles: StageOracles,
    pub t: DMatrix<f64>,
    pub diff: DiffSettings,
}

impl DOProblem {
    pub fn new(dims: Dimensions, oracles: StageOracles, t: DMatrix<f64>) -> Result<Self> {
        check_len("stage cost count", dims.horizon, oracles.costs.len())?;
        check_len("dynamics count", dims.horizon, oracles.dynamics.len())?;
        check_len("initial map rows", dims.n0, t.nrows())?;
        check_len("initial map columns", dims.nx, t.ncols())?;
        Ok(Self {
            dims,
            oracles,
            t,
            diff: DiffSettings::default(),
        })
    }

    pub fn with_diff_settings(mut self, diff: DiffSettings) -> Self {
        self.diff = diff;
        self
    }

    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    pub(crate) fn check(&self, w: &PrimalDualTrajectory, d: &DataTrajectory) -> Result<()> {
        w.validate(&self.dims)?;
        d.validate(&self.dims)
    }

    pub(crate) fn stage_dynamics(
        &self,
        i: usize,
        w: &PrimalDualTrajectory,
        d: &DataTrajectory,
    ) -> Result<DVector<f64>> {
        let f = self.oracles.dynamics[i].value(&w.x[i], &w.u[i], d.stage(i as isize));
        check_len("dynamics output", self.dims.nx, f.len())?;
        finite("dynamics", &f)?;
        Ok(f)
    }
}

pub(crate) fn finite(oracle: &'static str, v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::Evaluation { oracle, index }),
        None => Ok(()),
    }
}

fn finite_scalar(oracle: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation { oracle, index: 0 })
    }
}

/// Sum of stage costs plus terminal cost. Multipliers in `w` are ignored.
pub fn evaluate_objective(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    d: &DataTrajectory,
) -> Result<f64> {
    p.check(w, d)?;
    let n = p.dims.horizon;
    let mut total = 0.0;
    for i in 0..n {
        total += finite_scalar(
            "stage cost",
            p.oracles.costs[i].value(&w.x[i], &w.u[i], d.stage(i as isize)),
        )?;
    }
    let empty = DVector::zeros(0);
    total += finite_scalar(
        "terminal cost",
        p.oracles
            .terminal
            .value(&w.x[n], &empty, d.stage(n as isize)),
    )?;
    Ok(total)
}

/// Stacked residual `[T x_0 - d_{-1}; x_1 - f_0; ...; x_N - f_{N-1}]`.
pub fn evaluate_constraints(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    d: &DataTrajectory,
) -> Result<DVector<f64>> {
    p.check(w, d)?;
    let dims = &p.dims;
    let mut c = DVector::zeros(dims.dual_len());
    if dims.n0 > 0 {
        let r = &p.t * &w.x[0] - d.stage(-1);
        c.rows_mut(0, dims.n0).copy_from(&r);
    }
    for i in 0..dims.horizon {
        let f = p.stage_dynamics(i, w, d)?;
        let off = dims.lambda_offset(i as isize);
        c.rows_mut(off, dims.nx).copy_from(&(&w.x[i + 1] - f));
    }
    Ok(c)
}

/// Lagrangian `objective - lambda^T c`.
///
/// Stage-wise this is `l_i - lambda_{i-1}^T x_i + lambda_i^T f_i`, with the
/// initial term `lambda_{-1}^T (d_{-1} - T x_0)`.
pub fn evaluate_lagrangian(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    d: &DataTrajectory,
) -> Result<f64> {
    let obj = evaluate_objective(p, w, d)?;
    let c = evaluate_constraints(p, w, d)?;
    Ok(obj - w.dual().dot(&c))
}

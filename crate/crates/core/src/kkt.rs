//! Linearization into stage blocks, assembly of the primal Hessian and
//! constraint Jacobian, KKT solves, and the equality-constrained Newton method.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::diff::{self, StageLayout};
use crate::error::{Error, Result};
use crate::problem::{evaluate_constraints, DOProblem, DataTrajectory, PrimalDualTrajectory};

/// Per-stage linearization at a primal-dual point.
///
/// Hessian blocks differentiate the stage Lagrangian
/// `l_i - lambda_{i-1}^T x_i + lambda_i^T f_i`, so they include the
/// multiplier-weighted curvature of the dynamics. `q` and `e` carry one extra
/// entry for the terminal stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBlocks {
    /// `Q_0 .. Q_N`
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    /// `S_i = d^2 L_i / (dx_i du_i)`, `n_x x n_u`.
    pub s: Vec<DMatrix<f64>>,
    /// `E_0 .. E_N`
    pub e: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
    pub t: DMatrix<f64>,
}

impl StageBlocks {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn nx(&self) -> usize {
        self.t.ncols()
    }

    pub fn nu(&self) -> usize {
        self.b.first().map_or(0, |b| b.ncols())
    }

    pub fn n0(&self) -> usize {
        self.t.nrows()
    }

    pub fn primal_len(&self) -> usize {
        let n = self.horizon();
        (n + 1) * self.nx() + n * self.nu()
    }

    pub fn dual_len(&self) -> usize {
        self.n0() + self.horizon() * self.nx()
    }

    fn x_offset(&self, i: usize) -> usize {
        i * (self.nx() + self.nu())
    }

    fn u_offset(&self, i: usize) -> usize {
        self.x_offset(i) + self.nx()
    }

    /// Blocks of a time-invariant linear-quadratic system with zero data
    /// couplings. Handy for certificate experiments on raw matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn time_invariant(
        horizon: usize,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        q_terminal: &DMatrix<f64>,
        t: &DMatrix<f64>,
    ) -> Self {
        let nx = a.nrows();
        let nu = b.ncols();
        Self {
            q: (0..=horizon)
                .map(|i| {
                    if i == horizon {
                        q_terminal.clone()
                    } else {
                        q.clone()
                    }
                })
                .collect(),
            r: vec![r.clone(); horizon],
            s: vec![DMatrix::zeros(nx, nu); horizon],
            e: vec![DMatrix::zeros(nx, 0); horizon + 1],
            f: vec![DMatrix::zeros(nu, 0); horizon],
            a: vec![a.clone(); horizon],
            b: vec![b.clone(); horizon],
            g: vec![DMatrix::zeros(nx, 0); horizon],
            t: t.clone(),
        }
    }
}

struct StageLinearization {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    s: DMatrix<f64>,
    e: DMatrix<f64>,
    f: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    g: DMatrix<f64>,
}

fn sub(
    m: &DMatrix<f64>,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> DMatrix<f64> {
    m.view((rows.start, cols.start), (rows.len(), cols.len()))
        .into_owned()
}

/// Evaluates every stage block at `(w, d)`.
pub fn linearize(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    d: &DataTrajectory,
) -> Result<StageBlocks> {
    p.check(w, d)?;
    let dims = &p.dims;
    let n = dims.horizon;
    let stages: Vec<StageLinearization> = (0..n)
        .into_par_iter()
        .map(|i| {
            let layout = StageLayout {
                nx: dims.nx,
                nu: dims.nu,
                nd: dims.nd(i as isize),
            };
            let (x, u, di) = (&w.x[i], &w.u[i], d.stage(i as isize));
            let dynamics = &p.oracles.dynamics[i];
            let mut h = diff::cost_hessian(&p.oracles.costs[i], layout, x, u, di, &p.diff.second)?;
            h += diff::weighted_dynamics_hessian(
                dynamics,
                &w.lambda[i],
                layout,
                x,
                u,
                di,
                &p.diff.second,
            )?;
            let jac = diff::dynamics_jacobian(dynamics, layout, x, u, di, &p.diff.first)?;
            let rows = 0..dims.nx;
            Ok(StageLinearization {
                q: diff::symmetrize(&sub(&h, layout.x(), layout.x())),
                r: diff::symmetrize(&sub(&h, layout.u(), layout.u())),
                s: sub(&h, layout.x(), layout.u()),
                e: sub(&h, layout.x(), layout.d()),
                f: sub(&h, layout.u(), layout.d()),
                a: sub(&jac, rows.clone(), layout.x()),
                b: sub(&jac, rows.clone(), layout.u()),
                g: sub(&jac, rows, layout.d()),
            })
        })
        .collect::<Result<_>>()?;

    let terminal_layout = StageLayout {
        nx: dims.nx,
        nu: 0,
        nd: dims.nd(n as isize),
    };
    let h_term = diff::cost_hessian(
        &p.oracles.terminal,
        terminal_layout,
        &w.x[n],
        &DVector::zeros(0),
        d.stage(n as isize),
        &p.diff.second,
    )?;

    let mut blocks = StageBlocks {
        q: Vec::with_capacity(n + 1),
        r: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        e: Vec::with_capacity(n + 1),
        f: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        t: p.t.clone(),
    };
    for st in stages {
        blocks.q.push(st.q);
        blocks.r.push(st.r);
        blocks.s.push(st.s);
        blocks.e.push(st.e);
        blocks.f.push(st.f);
        blocks.a.push(st.a);
        blocks.b.push(st.b);
        blocks.g.push(st.g);
    }
    blocks.q.push(diff::symmetrize(&sub(
        &h_term,
        terminal_layout.x(),
        terminal_layout.x(),
    )));
    blocks
        .e
        .push(sub(&h_term, terminal_layout.x(), terminal_layout.d()));
    Ok(blocks)
}

/// Constraint Jacobian `J = d c / d z`: rows `[T; stage 0; ...; stage N-1]`,
/// columns `[x_0, u_0, ..., x_N]`; stage `i` rows read `[-A_i, -B_i, I]`.
pub fn assemble_jacobian(blocks: &StageBlocks) -> DMatrix<f64> {
    let (nx, nu, n0) = (blocks.nx(), blocks.nu(), blocks.n0());
    let mut j = DMatrix::zeros(blocks.dual_len(), blocks.primal_len());
    if n0 > 0 {
        j.view_mut((0, 0), (n0, nx)).copy_from(&blocks.t);
    }
    for i in 0..blocks.horizon() {
        let row = n0 + i * nx;
        j.view_mut((row, blocks.x_offset(i)), (nx, nx))
            .copy_from(&(-&blocks.a[i]));
        j.view_mut((row, blocks.u_offset(i)), (nx, nu))
            .copy_from(&(-&blocks.b[i]));
        j.view_mut((row, blocks.x_offset(i + 1)), (nx, nx))
            .fill_with_identity();
    }
    j
}

/// Primal Hessian `H = d^2 L / dz^2` in the column order of [`assemble_jacobian`].
pub fn assemble_hessian(blocks: &StageBlocks) -> DMatrix<f64> {
    let (nx, nu) = (blocks.nx(), blocks.nu());
    let n = blocks.horizon();
    let mut h = DMatrix::zeros(blocks.primal_len(), blocks.primal_len());
    for i in 0..n {
        let (xo, uo) = (blocks.x_offset(i), blocks.u_offset(i));
        h.view_mut((xo, xo), (nx, nx)).copy_from(&blocks.q[i]);
        h.view_mut((uo, uo), (nu, nu)).copy_from(&blocks.r[i]);
        h.view_mut((xo, uo), (nx, nu)).copy_from(&blocks.s[i]);
        h.view_mut((uo, xo), (nu, nx))
            .copy_from(&blocks.s[i].transpose());
    }
    let xo = blocks.x_offset(n);
    h.view_mut((xo, xo), (nx, nx)).copy_from(&blocks.q[n]);
    h
}

/// Full KKT matrix `[H J^T; J 0]`.
pub fn assemble_kkt_matrix(blocks: &StageBlocks) -> DMatrix<f64> {
    let h = assemble_hessian(blocks);
    let j = assemble_jacobian(blocks);
    let (np, nd) = (h.nrows(), j.nrows());
    let mut k = DMatrix::zeros(np + nd, np + nd);
    k.view_mut((0, 0), (np, np)).copy_from(&h);
    k.view_mut((np, 0), (nd, np)).copy_from(&j);
    k.view_mut((0, np), (np, nd)).copy_from(&j.transpose());
    k
}

/// Gradient of the Lagrangian in `w`: `[grad_z L; -c]`.
///
/// The multiplier rows are `d L / d lambda = -c`, so the vector vanishes
/// exactly at KKT points and coincides with the gradient of
/// [`crate::problem::evaluate_lagrangian`].
pub fn kkt_residual(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    d: &DataTrajectory,
) -> Result<DVector<f64>> {
    let c = evaluate_constraints(p, w, d)?;
    let dims = &p.dims;
    let n = dims.horizon;
    let (nx, nu) = (dims.nx, dims.nu);

    let stage_grads: Vec<(DVector<f64>, DVector<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let layout = StageLayout {
                nx,
                nu,
                nd: dims.nd(i as isize),
            };
            let (x, u, di) = (&w.x[i], &w.u[i], d.stage(i as isize));
            let gc = diff::cost_gradient(&p.oracles.costs[i], layout, x, u, di, &p.diff.first)?;
            let jac =
                diff::dynamics_jacobian(&p.oracles.dynamics[i], layout, x, u, di, &p.diff.first)?;
            let gl = jac.tr_mul(&w.lambda[i]);
            let gx = gc.rows(0, nx) + gl.rows(0, nx);
            let gu = gc.rows(nx, nu) + gl.rows(nx, nu);
            Ok((gx, gu))
        })
        .collect::<Result<_>>()?;

    let mut r = DVector::zeros(dims.primal_len() + dims.dual_len());
    for (i, (mut gx, gu)) in stage_grads.into_iter().enumerate() {
        if i == 0 {
            if dims.n0 > 0 {
                gx -= p.t.tr_mul(&w.lambda_init);
            }
        } else {
            gx -= &w.lambda[i - 1];
        }
        r.rows_mut(dims.x_offset(i), nx).copy_from(&gx);
        r.rows_mut(dims.u_offset(i), nu).copy_from(&gu);
    }
    let terminal_layout = StageLayout {
        nx,
        nu: 0,
        nd: dims.nd(n as isize),
    };
    let gt = diff::cost_gradient(
        &p.oracles.terminal,
        terminal_layout,
        &w.x[n],
        &DVector::zeros(0),
        d.stage(n as isize),
        &p.diff.first,
    )?;
    let mut gx = gt.rows(0, nx).into_owned();
    if n > 0 {
        gx -= &w.lambda[n - 1];
    } else if dims.n0 > 0 {
        gx -= p.t.tr_mul(&w.lambda_init);
    }
    r.rows_mut(dims.x_offset(n), nx).copy_from(&gx);
    let np = dims.primal_len();
    r.rows_mut(np, dims.dual_len()).copy_from(&(-c));
    Ok(r)
}

/// Solution of a KKT linear system: primal step and constraint multiplier
/// `mu` in `[H J^T; J 0] [dz; mu] = [-g; -c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktStep {
    pub dz: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Dense LU solve of `[H J^T; J 0] [dz; mu] = [-g; -c]`.
pub fn solve_kkt_dense(
    h: &DMatrix<f64>,
    j: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<KktStep> {
    let (np, nd) = (h.nrows(), j.nrows());
    let mut k = DMatrix::zeros(np + nd, np + nd);
    k.view_mut((0, 0), (np, np)).copy_from(h);
    k.view_mut((np, 0), (nd, np)).copy_from(j);
    k.view_mut((0, np), (np, nd)).copy_from(&j.transpose());
    let mut rhs = DVector::zeros(np + nd);
    rhs.rows_mut(0, np).copy_from(&(-g));
    rhs.rows_mut(np, nd).copy_from(&(-c));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Regularity("dense KKT matrix is singular".into()))?;
    Ok(KktStep {
        dz: sol.rows(0, np).into_owned(),
        mu: sol.rows(np, nd).into_owned(),
    })
}

fn chol(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Regularity(format!("{what} is not positive definite")))
}

/// Orthonormal bases `(Y, Z)` of the row space and null space of `T`, plus
/// the triangular factor with `T^T = Y R`.
fn initial_map_bases(t: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (n0, nx) = (t.nrows(), t.ncols());
    let mut padded = DMatrix::zeros(nx, n0 + nx);
    padded.view_mut((0, 0), (nx, n0)).copy_from(&t.transpose());
    padded.view_mut((0, n0), (nx, nx)).fill_with_identity();
    let qr = padded.qr();
    let q = qr.q();
    let rfac = qr.r().view((0, 0), (n0, n0)).into_owned();
    let scale = t.amax().max(1.0);
    if (0..n0).any(|k| rfac[(k, k)].abs() <= 1e-12 * scale) {
        return Err(Error::Regularity("initial map T is rank deficient".into()));
    }
    let y = q.columns(0, n0).into_owned();
    let z = q.columns(n0, nx - n0).into_owned();
    Ok((y, z, rfac))
}

/// Block-elimination (Riccati) solve of the KKT system
/// `[H + reg I, J^T; J, 0] [dz; mu] = [-g; -c]`.
///
/// Fails with [`Error::Regularity`] whenever a stage's condensed control
/// Hessian or the initial-stage reduced Hessian is not positive definite,
/// which is exactly when the reduced Hessian of the full system is not.
pub fn solve_kkt_structured(
    blocks: &StageBlocks,
    g: &DVector<f64>,
    c: &DVector<f64>,
    reg: f64,
) -> Result<KktStep> {
    let n = blocks.horizon();
    let (nx, nu, n0) = (blocks.nx(), blocks.nu(), blocks.n0());
    let eye_x = DMatrix::<f64>::identity(nx, nx);
    let eye_u = DMatrix::<f64>::identity(nu, nu);

    // e_i: affine term of dx_{i+1} = A dx_i + B du_i + e_i.
    let e: Vec<DVector<f64>> = (0..n)
        .map(|i| -c.rows(n0 + i * nx, nx).into_owned())
        .collect();

    let mut p_mat = &blocks.q[n] + &eye_x * reg;
    let mut p_vec = g.rows(blocks.x_offset(n), nx).into_owned();
    let mut gains: Vec<(DMatrix<f64>, DVector<f64>)> =
        vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); n];
    let mut values: Vec<(DMatrix<f64>, DVector<f64>)> =
        vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); n + 1];
    values[n] = (p_mat.clone(), p_vec.clone());

    for i in (0..n).rev() {
        let (a, b) = (&blocks.a[i], &blocks.b[i]);
        let q = g.rows(blocks.x_offset(i), nx);
        let r = g.rows(blocks.u_offset(i), nu);
        let pe = &p_mat * &e[i] + &p_vec;
        let pa = &p_mat * a;
        let rux = blocks.s[i].transpose() + b.tr_mul(&pa);
        let ru = r + b.tr_mul(&pe);
        let (k_mat, k_vec) = if nu > 0 {
            let ruu = &blocks.r[i] + &eye_u * reg + b.tr_mul(&(&p_mat * b));
            let ch = chol(diff::symmetrize(&ruu), "condensed control Hessian")?;
            (-ch.solve(&rux), -ch.solve(&ru))
        } else {
            (DMatrix::zeros(0, nx), DVector::zeros(0))
        };
        let new_p = &blocks.q[i] + &eye_x * reg + a.tr_mul(&pa) + rux.tr_mul(&k_mat);
        let new_pv = q + a.tr_mul(&pe) + rux.tr_mul(&k_vec);
        p_mat = diff::symmetrize(&new_p);
        p_vec = new_pv;
        gains[i] = (k_mat, k_vec);
        values[i] = (p_mat.clone(), p_vec.clone());
    }

    // Stage 0: min 1/2 x'P x + p'x  s.t.  T x = e_{-1}.
    let e_init = -c.rows(0, n0).into_owned();
    let (dx0, mu_init) = if n0 == 0 {
        let ch = chol(p_mat.clone(), "initial-stage Hessian")?;
        (-ch.solve(&p_vec), DVector::zeros(0))
    } else {
        let (y, z, rfac) = initial_map_bases(&blocks.t)?;
        let xy = rfac
            .transpose()
            .solve_lower_triangular(&e_init)
            .ok_or_else(|| Error::Regularity("initial map T is rank deficient".into()))?;
        let mut dx0 = &y * &xy;
        if z.ncols() > 0 {
            let red = z.tr_mul(&(&p_mat * &z));
            let ch = chol(diff::symmetrize(&red), "initial-stage reduced Hessian")?;
            let rhs = -z.tr_mul(&(&p_mat * &dx0 + &p_vec));
            dx0 += &z * ch.solve(&rhs);
        }
        let grad = &p_mat * &dx0 + &p_vec;
        let mu = rfac
            .solve_upper_triangular(&(-y.tr_mul(&grad)))
            .ok_or_else(|| Error::Regularity("initial map T is rank deficient".into()))?;
        (dx0, mu)
    };

    let mut dz = DVector::zeros(blocks.primal_len());
    let mut mu = DVector::zeros(blocks.dual_len());
    mu.rows_mut(0, n0).copy_from(&mu_init);
    let mut dx = dx0;
    for i in 0..n {
        dz.rows_mut(blocks.x_offset(i), nx).copy_from(&dx);
        let du = &gains[i].0 * &dx + &gains[i].1;
        dz.rows_mut(blocks.u_offset(i), nu).copy_from(&du);
        let next = &blocks.a[i] * &dx + &blocks.b[i] * &du + &e[i];
        let (pm, pv) = &values[i + 1];
        mu.rows_mut(n0 + i * nx, nx)
            .copy_from(&(-(pm * &next + pv)));
        dx = next;
    }
    dz.rows_mut(blocks.x_offset(n), nx).copy_from(&dx);
    Ok(KktStep { dz, mu })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stopping tolerance on the infinity norm of [`kkt_residual`].
    pub tol_kkt: f64,
    pub max_iter: usize,
    /// First nonzero Hessian shift tried when the KKT system has wrong inertia.
    pub reg0: f64,
    pub reg_max: f64,
    pub ls_beta: f64,
    pub ls_sigma: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-9,
            max_iter: 100,
            reg0: 1e-8,
            reg_max: 1e-2,
            ls_beta: 0.5,
            ls_sigma: 1e-4,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_kkt > 0.0) {
            return Err(Error::Config("tol_kkt must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.reg0 > 0.0 && self.reg_max >= self.reg0) {
            return Err(Error::Config("need 0 < reg0 <= reg_max".into()));
        }
        if !(self.ls_beta > 0.0 && self.ls_beta < 1.0 && self.ls_sigma > 0.0 && self.ls_sigma < 0.5)
        {
            return Err(Error::Config("line-search parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: PrimalDualTrajectory,
    pub iterations: usize,
    pub residual: f64,
    /// Largest Hessian shift used by any step.
    pub max_regularization: f64,
}

/// Regularized structured solve: no shift first, then `reg0`, `10 reg0`, ...
/// up to `reg_max`.
fn regularized_step(
    blocks: &StageBlocks,
    g: &DVector<f64>,
    c: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<(KktStep, f64)> {
    let mut reg = 0.0;
    loop {
        match solve_kkt_structured(blocks, g, c, reg) {
            Ok(step) if step.dz.iter().chain(step.mu.iter()).all(|v| v.is_finite()) => {
                return Ok((step, reg))
            }
            Ok(_) | Err(Error::Regularity(_)) => {}
            Err(e) => return Err(e),
        }
        reg = if reg == 0.0 { opts.reg0 } else { reg * 10.0 };
        if reg > opts.reg_max * (1.0 + 1e-12) {
            return Err(Error::Regularity(format!(
                "KKT system singular or of wrong inertia after regularization {:.1e}",
                opts.reg_max
            )));
        }
    }
}

fn apply_step(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    step: &KktStep,
    alpha: f64,
) -> Result<PrimalDualTrajectory> {
    let np = p.dims.primal_len();
    let mut flat = w.to_flat();
    let mut inc = DVector::zeros(flat.len());
    inc.rows_mut(0, np).copy_from(&step.dz);
    // lambda step is -mu for the pairing L = obj - lambda^T c.
    inc.rows_mut(np, p.dims.dual_len()).copy_from(&(-&step.mu));
    flat.axpy(alpha, &inc, 1.0);
    PrimalDualTrajectory::from_flat(&p.dims, &flat)
}

/// Newton's method on the KKT conditions with backtracking on `1/2 |r|^2`.
pub fn solve_equality_nlp(
    p: &DOProblem,
    d: &DataTrajectory,
    w0: &PrimalDualTrajectory,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    p.check(w0, d)?;
    let np = p.dims.primal_len();
    let mut w = w0.clone();
    let mut r = kkt_residual(p, &w, d)?;
    let mut max_reg: f64 = 0.0;
    for iter in 0..opts.max_iter {
        let norm = r.amax();
        if norm <= opts.tol_kkt {
            return Ok(SolveReport {
                solution: w,
                iterations: iter,
                residual: norm,
                max_regularization: max_reg,
            });
        }
        let blocks = linearize(p, &w, d)?;
        let g = r.rows(0, np).into_owned();
        let c = -r.rows(np, p.dims.dual_len()).into_owned();
        let (step, reg) = regularized_step(&blocks, &g, &c, opts)?;
        max_reg = max_reg.max(reg);

        let merit = 0.5 * r.norm_squared();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-10 {
            let trial = apply_step(p, &w, &step, alpha)?;
            if let Ok(rt) = kkt_residual(p, &trial, d) {
                let mt = 0.5 * rt.norm_squared();
                if mt <= (1.0 - 2.0 * opts.ls_sigma * alpha) * merit {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= opts.ls_beta;
        }
        match accepted {
            Some((trial, rt)) => {
                w = trial;
                r = rt;
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations: iter + 1,
                    residual: norm,
                    last: Box::new(w),
                })
            }
        }
    }
    let norm = r.amax();
    if norm <= opts.tol_kkt {
        return Ok(SolveReport {
            solution: w,
            iterations: opts.max_iter,
            residual: norm,
            max_regularization: max_reg,
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: norm,
        last: Box::new(w),
    })
}

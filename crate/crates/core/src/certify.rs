//! Regularity moduli: constraint-qualification and second-order constants,
//! Lagrangian Hessian bounds, and windowed controllability / observability.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kkt::{assemble_hessian, assemble_jacobian, linearize, StageBlocks};
use crate::problem::{DOProblem, DataTrajectory, PrimalDualTrajectory};

/// Tolerance used for the "S = 0" and "Q >= 0" hypothesis flags.
pub const FLAG_TOL: f64 = 1e-8;
/// Relative threshold below which a Gramian minimum counts as singular.
pub const RANK_TOL: f64 = 1e-10;

fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// State-transition product `A_b A_{b-1} ... A_a`, identity when `a > b`.
fn transition(a: &[DMatrix<f64>], from: usize, to_inclusive: isize, nx: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::identity(nx, nx);
    let mut k = from as isize;
    while k <= to_inclusive {
        acc = &a[k as usize] * acc;
        k += 1;
    }
    acc
}

/// `[A_{i+1:j} B_i, ..., A_j B_{j-1}, B_j]` for arbitrary stage sequences.
pub fn controllability_matrix_seq(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    i: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    if i > j || j >= b.len() || j >= a.len() {
        return Err(Error::Argument(format!(
            "controllability window [{i}, {j}] outside [0, {}]",
            b.len().min(a.len()).saturating_sub(1)
        )));
    }
    let nx = b[j].nrows();
    let nu = b[j].ncols();
    let mut c = DMatrix::zeros(nx, (j - i + 1) * nu);
    // Build right to left so each factor is reused.
    let mut tail = DMatrix::identity(nx, nx);
    for k in (i..=j).rev() {
        c.view_mut((0, (k - i) * nu), (nx, nu))
            .copy_from(&(&tail * &b[k]));
        tail = &tail * &a[k];
    }
    Ok(c)
}

/// `[Q_j A_{i:j-1}; ...; Q_{i+1} A_i; Q_i]` for arbitrary stage sequences.
pub fn observability_matrix_seq(
    a: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    i: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    if i > j || j >= q.len() || j > a.len() {
        return Err(Error::Argument(format!(
            "observability window [{i}, {j}] outside [0, {}]",
            q.len().min(a.len() + 1).saturating_sub(1)
        )));
    }
    let nx = q[i].ncols();
    let rows: Vec<usize> = (i..=j).rev().map(|k| q[k].nrows()).collect();
    let mut o = DMatrix::zeros(rows.iter().sum(), nx);
    let mut row = 0;
    for k in (i..=j).rev() {
        let block = &q[k] * transition(a, i, k as isize - 1, nx);
        o.view_mut((row, 0), (block.nrows(), nx)).copy_from(&block);
        row += block.nrows();
    }
    Ok(o)
}

pub fn controllability_matrix(blocks: &StageBlocks, i: usize, j: usize) -> Result<DMatrix<f64>> {
    controllability_matrix_seq(&blocks.a, &blocks.b, i, j)
}

pub fn observability_matrix(blocks: &StageBlocks, i: usize, j: usize) -> Result<DMatrix<f64>> {
    observability_matrix_seq(&blocks.a, &blocks.q, i, j)
}

/// Gramian minima over every forward window of a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScan {
    /// `j - i` for each scanned window `[i, j]`.
    pub window_length: usize,
    /// Entry `k` is the modulus of window `[k, k + window_length]`.
    pub values: Vec<f64>,
    pub minimum: f64,
}

impl WindowScan {
    fn from_values(window_length: usize, values: Vec<f64>) -> Self {
        let minimum = values.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            window_length,
            values,
            minimum,
        }
    }

    /// True when every window's Gramian is nonsingular relative to the
    /// largest window value.
    pub fn passes(&self) -> bool {
        let scale = self.values.iter().copied().fold(1.0, f64::max);
        self.minimum > RANK_TOL * scale
    }
}

fn check_window(window: usize, stages: usize) -> Result<()> {
    if stages == 0 || window >= stages {
        return Err(Error::Argument(format!(
            "window {window} does not fit in {stages} stages"
        )));
    }
    Ok(())
}

/// `lambda_min(C C^T)` over windows `[i, i + window]` inside `[0, a.len() - 1]`.
pub fn scan_controllability_seq(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    window: usize,
) -> Result<WindowScan> {
    let stages = a.len().min(b.len());
    check_window(window, stages)?;
    let values = (0..stages - window)
        .into_par_iter()
        .map(|i| {
            let c = controllability_matrix_seq(a, b, i, i + window)?;
            Ok(lambda_min(&(&c * c.transpose())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowScan::from_values(window, values))
}

/// `lambda_min(O^T O)` over windows `[i, i + window]` inside `[0, a.len() - 1]`.
pub fn scan_observability_seq(
    a: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    window: usize,
) -> Result<WindowScan> {
    let stages = a.len().min(q.len());
    check_window(window, stages)?;
    let values = (0..stages - window)
        .into_par_iter()
        .map(|i| {
            let o = observability_matrix_seq(a, q, i, i + window)?;
            Ok(lambda_min(&o.tr_mul(&o)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowScan::from_values(window, values))
}

/// Controllability scan over stages `[0, N-1]`; `window` is `j - i`.
pub fn scan_uniform_controllability(blocks: &StageBlocks, window: usize) -> Result<WindowScan> {
    scan_controllability_seq(&blocks.a, &blocks.b, window)
}

/// Observability scan over stages `[0, N-1]`; `window` is `j - i`.
pub fn scan_uniform_observability(blocks: &StageBlocks, window: usize) -> Result<WindowScan> {
    let n = blocks.horizon();
    scan_observability_seq(&blocks.a, &blocks.q[..n], window)
}

/// Outcome of searching for the shortest passing window.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowOutcome {
    Passed {
        window: usize,
        modulus: f64,
    },
    /// No window up to `max_window` passed; `best` is the largest minimum seen.
    Failed {
        max_window: usize,
        best: f64,
    },
}

impl WindowOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, WindowOutcome::Passed { .. })
    }

    fn from_scan(scan: &WindowScan) -> Self {
        if scan.passes() {
            WindowOutcome::Passed {
                window: scan.window_length,
                modulus: scan.minimum,
            }
        } else {
            WindowOutcome::Failed {
                max_window: scan.window_length,
                best: scan.minimum.max(0.0),
            }
        }
    }
}

fn search_windows<F>(stages: usize, max_window: usize, scan: F) -> Result<WindowOutcome>
where
    F: Fn(usize) -> Result<WindowScan>,
{
    let last = max_window.min(stages.saturating_sub(1));
    let mut best: f64 = 0.0;
    for w in 0..=last {
        let s = scan(w)?;
        if s.passes() {
            return Ok(WindowOutcome::from_scan(&s));
        }
        best = best.max(s.minimum);
    }
    Ok(WindowOutcome::Failed {
        max_window: last,
        best,
    })
}

/// Shortest controllability window (at most `max_window`) with a nonsingular
/// Gramian in every position.
pub fn find_controllability_window(
    blocks: &StageBlocks,
    max_window: usize,
) -> Result<WindowOutcome> {
    if blocks.horizon() == 0 {
        return Ok(WindowOutcome::Failed {
            max_window: 0,
            best: 0.0,
        });
    }
    search_windows(blocks.horizon(), max_window, |w| {
        scan_uniform_controllability(blocks, w)
    })
}

/// Shortest observability window (at most `max_window`) with a nonsingular
/// Gramian in every position.
pub fn find_observability_window(blocks: &StageBlocks, max_window: usize) -> Result<WindowOutcome> {
    if blocks.horizon() == 0 {
        return Ok(WindowOutcome::Failed {
            max_window: 0,
            best: 0.0,
        });
    }
    search_windows(blocks.horizon(), max_window, |w| {
        scan_uniform_observability(blocks, w)
    })
}

/// Result of comparing a controllability scan with the observability scan of
/// the reversed, transposed sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityCheck {
    pub agree: bool,
    pub controllability: f64,
    pub observability: f64,
    /// Largest per-window relative discrepancy.
    pub max_discrepancy: f64,
}

/// Reverses and transposes `(A_i, B_i)` into `(A'_m, Q'_m) = (A_{M-m}^T, B_{M-m}^T)`.
pub fn dual_sequences(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    (
        a.iter().rev().map(|m| m.transpose()).collect(),
        b.iter().rev().map(|m| m.transpose()).collect(),
    )
}

pub fn duality_check_seq(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    window: usize,
) -> Result<DualityCheck> {
    let ctrl = scan_controllability_seq(a, b, window)?;
    let (ad, qd) = dual_sequences(a, b);
    let obs = scan_observability_seq(&ad, &qd, window)?;
    // Window [i, i+W] of the original maps to [M-i-W, M-i] of the dual,
    // i.e. the dual scan lists windows in reverse order.
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1.0);
    let max_discrepancy = ctrl
        .values
        .iter()
        .zip(obs.values.iter().rev())
        .map(|(&x, &y)| rel(x, y))
        .fold(0.0, f64::max);
    Ok(DualityCheck {
        agree: rel(ctrl.minimum, obs.minimum) <= 1e-9,
        controllability: ctrl.minimum,
        observability: obs.minimum,
        max_discrepancy,
    })
}

pub fn duality_check(blocks: &StageBlocks, window: usize) -> Result<DualityCheck> {
    duality_check_seq(&blocks.a, &blocks.b, window)
}

/// `lambda_min(J J^T)` as the squared smallest singular value of `J`.
///
/// Zero when `J` has more rows than columns; infinite when it has no rows.
pub fn licq_modulus(j: &DMatrix<f64>) -> f64 {
    let (m, n) = j.shape();
    if m == 0 {
        return f64::INFINITY;
    }
    if m > n {
        return 0.0;
    }
    let smin = j
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    smin * smin
}

/// Smallest eigenvalue of the reduced Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SoscModulus {
    Finite(f64),
    /// The constraint null space is trivial, so the condition holds vacuously.
    Vacuous,
}

impl SoscModulus {
    /// `+inf` for the vacuous case.
    pub fn value(self) -> f64 {
        match self {
            SoscModulus::Finite(v) => v,
            SoscModulus::Vacuous => f64::INFINITY,
        }
    }

    pub fn is_positive(self) -> bool {
        self.value() > 0.0
    }
}

/// Orthonormal basis of `null(J)`; errors if `J` lacks full row rank.
pub fn null_space_basis(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = j.shape();
    let rank_error = || {
        Error::Regularity("constraint Jacobian is rank deficient; check licq_modulus first".into())
    };
    if m > n {
        return Err(rank_error());
    }
    let mut padded = DMatrix::zeros(n, m + n);
    padded.view_mut((0, 0), (n, m)).copy_from(&j.transpose());
    padded.view_mut((0, m), (n, n)).fill_with_identity();
    let qr = padded.qr();
    let r = qr.r();
    let scale = j.amax().max(1.0);
    if (0..m).any(|k| r[(k, k)].abs() <= 1e-10 * scale) {
        return Err(rank_error());
    }
    Ok(qr.q().columns(m, n - m).into_owned())
}

/// `lambda_min(Z^T H Z)` for an orthonormal null-space basis `Z` of `J`.
pub fn sosc_modulus(h: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<SoscModulus> {
    if h.nrows() != j.ncols() || h.ncols() != j.ncols() {
        return Err(Error::Dimension {
            context: "sosc hessian",
            expected: j.ncols(),
            actual: h.nrows(),
        });
    }
    let z = null_space_basis(j)?;
    if z.ncols() == 0 {
        return Ok(SoscModulus::Vacuous);
    }
    let reduced = z.tr_mul(&(h * &z));
    Ok(SoscModulus::Finite(lambda_min(&crate::diff::symmetrize(
        &reduced,
    ))))
}

/// Mixed second derivative of the Lagrangian with respect to `w` (rows) and
/// `(w, d)` (columns), with `w` ordered `[z; lambda]` and `d` ordered by stage.
pub fn lagrangian_mixed_hessian(blocks: &StageBlocks) -> DMatrix<f64> {
    let h = assemble_hessian(blocks);
    let j = assemble_jacobian(blocks);
    let (np, nl) = (h.nrows(), j.nrows());
    let (nx, nu, n0) = (blocks.nx(), blocks.nu(), blocks.n0());
    let n = blocks.horizon();
    let nd: Vec<usize> = (0..=n).map(|i| blocks.e[i].ncols()).collect();
    let ndata = n0 + nd.iter().sum::<usize>();
    let nw = np + nl;
    let mut m = DMatrix::zeros(nw, nw + ndata);
    m.view_mut((0, 0), (np, np)).copy_from(&h);
    m.view_mut((np, 0), (nl, np)).copy_from(&(-&j));
    m.view_mut((0, np), (np, nl)).copy_from(&(-j.transpose()));

    // Data columns: d_{-1} enters only through the initial constraint.
    let mut col = nw;
    if n0 > 0 {
        m.view_mut((np, col), (n0, n0)).fill_with_identity();
    }
    col += n0;
    for i in 0..=n {
        let xo = i * (nx + nu);
        if nd[i] > 0 {
            m.view_mut((xo, col), (nx, nd[i])).copy_from(&blocks.e[i]);
            if i < n {
                m.view_mut((xo + nx, col), (nu, nd[i]))
                    .copy_from(&blocks.f[i]);
                m.view_mut((np + n0 + i * nx, col), (nx, nd[i]))
                    .copy_from(&blocks.g[i]);
            }
        }
        col += nd[i];
    }
    m
}

/// Spectral norm of [`lagrangian_mixed_hessian`].
pub fn blh_modulus_from_blocks(blocks: &StageBlocks) -> f64 {
    let m = lagrangian_mixed_hessian(blocks);
    // The row count is the smaller dimension, so M M^T is the cheaper Gramian.
    lambda_max(&(&m * m.transpose())).max(0.0).sqrt()
}

pub fn blh_modulus(p: &DOProblem, w: &PrimalDualTrajectory, d: &DataTrajectory) -> Result<f64> {
    Ok(blh_modulus_from_blocks(&linearize(p, w, d)?))
}

/// Explicit Hessian bound `4 max(4K, 1)` for `K`-bounded blocks.
pub fn blh_bound_from_k(k: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(Error::Argument(format!(
            "block bound must be nonnegative, got {k}"
        )));
    }
    Ok(4.0 * (4.0 * k).max(1.0))
}

/// Largest spectral norm over every stage block and `T`.
pub fn block_bound(blocks: &StageBlocks) -> f64 {
    let groups: [&[DMatrix<f64>]; 8] = [
        &blocks.q, &blocks.r, &blocks.s, &blocks.e, &blocks.f, &blocks.a, &blocks.b, &blocks.g,
    ];
    groups
        .iter()
        .flat_map(|g| g.iter())
        .chain(std::iter::once(&blocks.t))
        .map(spectral_norm)
        .fold(0.0, f64::max)
}

/// Which sufficient conditions for uniform regularity hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypothesisFlags {
    pub q_psd: bool,
    pub s_zero: bool,
    pub r_positive: bool,
    pub t_full_row_rank: bool,
    pub controllable: bool,
    pub observable: bool,
}

impl HypothesisFlags {
    pub fn all(&self) -> bool {
        self.q_psd
            && self.s_zero
            && self.r_positive
            && self.t_full_row_rank
            && self.controllable
            && self.observable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub horizon: usize,
    /// `lambda_min(J J^T)`.
    pub beta: f64,
    /// `None` when `J` is rank deficient and the reduced Hessian is undefined.
    pub gamma: Option<SoscModulus>,
    pub l_observed: f64,
    pub k: f64,
    /// `4 max(4K, 1)`.
    pub l_bound: f64,
    /// `min_i lambda_min(R_i)`; infinite without controls.
    pub r: f64,
    /// `lambda_min(T T^T)`; `None` when there is no initial constraint.
    pub delta: Option<f64>,
    pub ctrl: WindowOutcome,
    pub obs: WindowOutcome,
    pub flags: HypothesisFlags,
}

impl CertificateReport {
    /// Flat `key = value` pairs in a fixed order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("horizon".to_string(), self.horizon.to_string()),
            ("beta".into(), fmt(self.beta)),
            (
                "gamma".into(),
                match self.gamma {
                    Some(SoscModulus::Finite(v)) => fmt(v),
                    Some(SoscModulus::Vacuous) => "vacuous".into(),
                    None => "undefined".into(),
                },
            ),
            ("L_observed".into(), fmt(self.l_observed)),
            ("K".into(), fmt(self.k)),
            ("L_bound".into(), fmt(self.l_bound)),
            ("r".into(), fmt(self.r)),
            (
                "delta".into(),
                self.delta.map_or_else(|| "absent".into(), fmt),
            ),
        ];
        for (name, outcome) in [("ctrl", &self.ctrl), ("obs", &self.obs)] {
            match outcome {
                WindowOutcome::Passed { window, modulus } => {
                    kv.push((format!("{name}_status"), "pass".into()));
                    kv.push((format!("{name}_window"), window.to_string()));
                    kv.push((format!("{name}_modulus"), fmt(*modulus)));
                }
                WindowOutcome::Failed { max_window, best } => {
                    kv.push((format!("{name}_status"), "fail".into()));
                    kv.push((format!("{name}_window"), max_window.to_string()));
                    kv.push((format!("{name}_modulus"), fmt(*best)));
                }
            }
        }
        let f = &self.flags;
        for (name, v) in [
            ("flag_q_psd", f.q_psd),
            ("flag_s_zero", f.s_zero),
            ("flag_r_positive", f.r_positive),
            ("flag_t_full_row_rank", f.t_full_row_rank),
            ("flag_controllable", f.controllable),
            ("flag_observable", f.observable),
        ] {
            kv.push((name.into(), v.to_string()));
        }
        kv
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Window selection for [`build_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowChoice {
    Fixed(usize),
    /// Shortest passing window up to the given length.
    Search(usize),
}

fn window_outcome(
    blocks: &StageBlocks,
    choice: WindowChoice,
    fixed: fn(&StageBlocks, usize) -> Result<WindowScan>,
    search: fn(&StageBlocks, usize) -> Result<WindowOutcome>,
) -> WindowOutcome {
    let failed = WindowOutcome::Failed {
        max_window: 0,
        best: 0.0,
    };
    match choice {
        WindowChoice::Fixed(w) => fixed(blocks, w)
            .map(|s| WindowOutcome::from_scan(&s))
            .unwrap_or(failed),
        WindowChoice::Search(max) => search(blocks, max).unwrap_or(failed),
    }
}

/// Every modulus and hypothesis flag for already-linearized blocks.
pub fn build_report_from_blocks(
    blocks: &StageBlocks,
    ctrl: WindowChoice,
    obs: WindowChoice,
) -> CertificateReport {
    let n = blocks.horizon();
    let h = assemble_hessian(blocks);
    let j = assemble_jacobian(blocks);
    let k = block_bound(blocks);
    let r = blocks
        .r
        .iter()
        .map(lambda_min)
        .fold(f64::INFINITY, f64::min);
    let delta = (blocks.n0() > 0).then(|| lambda_min(&(&blocks.t * blocks.t.transpose())));
    let ctrl = window_outcome(
        blocks,
        ctrl,
        scan_uniform_controllability,
        find_controllability_window,
    );
    let obs = window_outcome(
        blocks,
        obs,
        scan_uniform_observability,
        find_observability_window,
    );
    let flags = HypothesisFlags {
        q_psd: blocks.q.iter().all(|q| lambda_min(q) >= -FLAG_TOL),
        s_zero: blocks.s.iter().all(|s| s.amax() <= FLAG_TOL),
        r_positive: n == 0 || r > RANK_TOL,
        t_full_row_rank: delta.is_none_or(|dl| dl > RANK_TOL),
        controllable: ctrl.passed(),
        observable: obs.passed(),
    };
    CertificateReport {
        horizon: n,
        beta: licq_modulus(&j),
        gamma: sosc_modulus(&h, &j).ok(),
        l_observed: blh_modulus_from_blocks(blocks),
        k,
        l_bound: 4.0 * (4.0 * k).max(1.0),
        r,
        delta,
        ctrl,
        obs,
        flags,
    }
}

/// Linearizes at `(w, d)` and builds the full certificate report.
pub fn build_report(
    p: &DOProblem,
    w: &PrimalDualTrajectory,
    d: &DataTrajectory,
    ctrl: WindowChoice,
    obs: WindowChoice,
) -> Result<CertificateReport> {
    let blocks = linearize(p, w, d)?;
    Ok(build_report_from_blocks(&blocks, ctrl, obs))
}

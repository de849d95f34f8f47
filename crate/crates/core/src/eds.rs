//! Stage-wise perturbation experiments and exponential envelope fits.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kkt::{solve_equality_nlp, SolveOptions};
use crate::problem::{DOProblem, DataTrajectory, Dimensions, PrimalDualTrajectory};

/// Additive data perturbation at a single stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    /// Stage index in `[-1, N]`.
    pub stage: isize,
    pub delta: DVector<f64>,
}

impl PerturbationSpec {
    pub fn new(stage: isize, delta: DVector<f64>) -> Self {
        Self { stage, delta }
    }

    /// Direction drawn uniformly from the sphere, scaled to `magnitude`.
    pub fn random<R: Rng + ?Sized>(
        dims: &Dimensions,
        stage: isize,
        magnitude: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_stage(dims, stage)?;
        let n = dims.nd(stage);
        if n == 0 {
            return Err(Error::Argument(format!("stage {stage} carries no data")));
        }
        let mut v: DVector<f64> = loop {
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if v.norm() > 1e-12 {
                break v;
            }
        };
        v *= magnitude / v.norm();
        Ok(Self::new(stage, v))
    }

    pub fn magnitude(&self) -> f64 {
        self.delta.norm()
    }

    /// `d` with the perturbation added at `stage`.
    pub fn apply(&self, dims: &Dimensions, d: &DataTrajectory) -> Result<DataTrajectory> {
        check_stage(dims, self.stage)?;
        crate::error::check_len("perturbation", dims.nd(self.stage), self.delta.len())?;
        if !(self.magnitude().is_finite()) {
            return Err(Error::Argument("perturbation must be finite".into()));
        }
        let mut out = d.clone();
        *out.stage_mut(self.stage) += &self.delta;
        Ok(out)
    }
}

fn check_stage(dims: &Dimensions, stage: isize) -> Result<()> {
    if stage < -1 || stage > dims.horizon as isize {
        return Err(Error::Argument(format!(
            "stage {stage} outside [-1, {}]",
            dims.horizon
        )));
    }
    Ok(())
}

/// Stage-wise deviation norms `s_i`, `i = -1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityProfile {
    /// Perturbed stage.
    pub stage: isize,
    /// `s[k]` belongs to stage `k - 1`.
    pub s: Vec<f64>,
    pub magnitude: f64,
    pub converged: bool,
    pub replicate: usize,
}

impl SensitivityProfile {
    pub fn at(&self, i: isize) -> f64 {
        self.s[(i + 1) as usize]
    }

    pub fn stages(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        self.s.iter().enumerate().map(|(k, &v)| (k as isize - 1, v))
    }

    fn usable(&self) -> bool {
        self.converged && self.magnitude > 0.0
    }
}

/// `s_i` for every stage between two primal-dual trajectories.
pub fn stage_deviations(
    a: &PrimalDualTrajectory,
    b: &PrimalDualTrajectory,
    primal_only: bool,
) -> Vec<f64> {
    let n = a.horizon() as isize;
    (-1..=n)
        .map(|i| {
            if primal_only {
                (a.primal_block(i) - b.primal_block(i)).norm()
            } else {
                (a.block(i) - b.block(i)).norm()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExperimentOptions {
    pub solve: SolveOptions,
    /// Measure only `(x_i, u_i)` instead of the full `(x_i, u_i, lambda_i)`.
    pub primal_only: bool,
}

/// Solves the perturbed problem from `w_star` and records the deviations.
///
/// Solver failures (non-convergence, singular KKT systems) do not abort: the
/// profile is returned with `converged = false`.
pub fn run_perturbation_experiment(
    p: &DOProblem,
    d_star: &DataTrajectory,
    w_star: &PrimalDualTrajectory,
    spec: &PerturbationSpec,
    opts: &ExperimentOptions,
) -> Result<SensitivityProfile> {
    let d = spec.apply(&p.dims, d_star)?;
    let (w, converged) = match solve_equality_nlp(p, &d, w_star, &opts.solve) {
        Ok(rep) => (rep.solution, true),
        Err(Error::NonConvergence { last, .. }) => (*last, false),
        Err(Error::Regularity(_)) | Err(Error::Evaluation { .. }) => (w_star.clone(), false),
        Err(e) => return Err(e),
    };
    let s = stage_deviations(&w, w_star, opts.primal_only);
    Ok(SensitivityProfile {
        stage: spec.stage,
        converged: converged && s.iter().all(|v| v.is_finite()),
        s,
        magnitude: spec.magnitude(),
        replicate: 0,
    })
}

/// Seeded batch of random single-stage perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub stages: Vec<isize>,
    pub replicates: usize,
    pub magnitude: f64,
    pub seed: u64,
}

impl ExperimentPlan {
    /// Direction for `(stage, replicate)`; independent of evaluation order.
    pub fn perturbation(
        &self,
        dims: &Dimensions,
        stage: isize,
        replicate: usize,
    ) -> Result<PerturbationSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((stage + 1) as u64) << 32 | replicate as u64);
        PerturbationSpec::random(dims, stage, self.magnitude, &mut rng)
    }
}

/// Runs every `(stage, replicate)` pair in parallel; output order is
/// stage-major and deterministic.
pub fn run_experiments(
    p: &DOProblem,
    d_star: &DataTrajectory,
    w_star: &PrimalDualTrajectory,
    plan: &ExperimentPlan,
    opts: &ExperimentOptions,
) -> Result<Vec<SensitivityProfile>> {
    if !(plan.magnitude > 0.0 && plan.magnitude.is_finite()) {
        return Err(Error::Config(
            "perturbation magnitude must be positive".into(),
        ));
    }
    let jobs: Vec<(isize, usize)> = plan
        .stages
        .iter()
        .flat_map(|&j| (0..plan.replicates).map(move |r| (j, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(j, r)| {
            let spec = plan.perturbation(&p.dims, j, r)?;
            let mut prof = run_perturbation_experiment(p, d_star, w_star, &spec, opts)?;
            prof.replicate = r;
            Ok(prof)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    LeastSquares,
    /// LS decay rate with the smallest prefactor that covers every point.
    UpperEnvelope,
}

/// Envelope `s_i / |delta| ~ upsilon * rho^|i - j|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub upsilon: f64,
    pub rho: f64,
    pub r2: f64,
    /// Normalized values at or below this were ignored.
    pub floor: f64,
    /// The fitted rate was at least one and has been clamped to one.
    pub no_decay: bool,
    pub points: usize,
    pub mode: FitMode,
}

impl DecayFit {
    pub fn envelope(&self, distance: usize) -> f64 {
        self.upsilon * self.rho.powi(distance as i32)
    }
}

fn distance(i: isize, j: isize) -> usize {
    (i - j).unsigned_abs()
}

/// Pooled `(distance, normalized value)` points above the numerical floor.
fn fit_points(profiles: &[SensitivityProfile]) -> (Vec<(f64, f64)>, f64) {
    let usable: Vec<&SensitivityProfile> = profiles.iter().filter(|p| p.usable()).collect();
    let peak = usable
        .iter()
        .flat_map(|p| p.s.iter().map(move |v| v / p.magnitude))
        .fold(0.0, f64::max);
    let floor = (1e-9 * peak).max(1e-12);
    let pts = usable
        .iter()
        .flat_map(|p| {
            p.stages().filter_map(move |(i, v)| {
                let y = v / p.magnitude;
                (y > floor).then(|| (distance(i, p.stage) as f64, y))
            })
        })
        .collect();
    (pts, floor)
}

/// Least-squares fit of `ln(s_i / |delta|)` against `|i - j|`, pooled over
/// converged profiles.
pub fn fit_decay(profiles: &[SensitivityProfile]) -> Result<DecayFit> {
    let (pts, floor) = fit_points(profiles);
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "{} points above the floor {floor:.3e}; need at least 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all points share one distance".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1.ln() - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1.ln() - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    let rho = slope.exp();
    Ok(DecayFit {
        upsilon: intercept.exp(),
        rho: rho.min(1.0),
        r2,
        floor,
        no_decay: rho >= 1.0,
        points: pts.len(),
        mode: FitMode::LeastSquares,
    })
}

/// Least-squares rate, prefactor raised until no point lies above the envelope.
pub fn fit_upper_envelope(profiles: &[SensitivityProfile]) -> Result<DecayFit> {
    let ls = fit_decay(profiles)?;
    let (pts, _) = fit_points(profiles);
    let upsilon = pts
        .iter()
        .map(|&(k, y)| y / ls.rho.powf(k))
        .fold(0.0, f64::max);
    Ok(DecayFit {
        upsilon,
        mode: FitMode::UpperEnvelope,
        ..ls
    })
}

pub fn fit(profiles: &[SensitivityProfile], mode: FitMode) -> Result<DecayFit> {
    match mode {
        FitMode::LeastSquares => fit_decay(profiles),
        FitMode::UpperEnvelope => fit_upper_envelope(profiles),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub checked: usize,
    /// Points at or below the fit floor, which are not checked.
    pub below_floor: usize,
    pub violations: usize,
    /// Largest `s_i / (slack * envelope)` among checked points.
    pub worst_ratio: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `s_i <= slack * upsilon * rho^|i-j| * |delta|` for every converged
/// profile and stage above the fit floor.
pub fn verify_eds_bound(profiles: &[SensitivityProfile], fit: &DecayFit, slack: f64) -> BoundCheck {
    let mut out = BoundCheck {
        checked: 0,
        below_floor: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for p in profiles.iter().filter(|p| p.usable()) {
        for (i, v) in p.stages() {
            if v / p.magnitude <= fit.floor {
                out.below_floor += 1;
                continue;
            }
            let bound = slack * fit.envelope(distance(i, p.stage)) * p.magnitude;
            let ratio = v / bound;
            out.checked += 1;
            out.worst_ratio = out.worst_ratio.max(ratio);
            if ratio > 1.0 + 1e-12 {
                out.violations += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayContrast {
    pub rho_a: f64,
    pub rho_b: f64,
    pub margin: f64,
    /// `rho_a + margin < rho_b`: case `a` decays measurably faster.
    pub faster: bool,
}

pub fn decay_contrast(case_a: &DecayFit, case_b: &DecayFit, margin: f64) -> DecayContrast {
    DecayContrast {
        rho_a: case_a.rho,
        rho_b: case_b.rho,
        margin,
        faster: case_a.rho + margin < case_b.rho,
    }
}

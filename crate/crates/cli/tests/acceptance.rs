//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use edslab::certify::{
    blh_bound_from_k, blh_modulus_from_blocks, block_bound, build_report, dual_sequences,
    duality_check_seq, licq_modulus, scan_controllability_seq, scan_observability_seq,
    sosc_modulus, WindowChoice, WindowOutcome,
};
use edslab::eds::{
    fit_decay, fit_upper_envelope, run_experiments, verify_eds_bound, ExperimentOptions,
    ExperimentPlan, SensitivityProfile,
};
use edslab::kkt::{
    assemble_hessian, assemble_jacobian, kkt_residual, solve_equality_nlp, solve_kkt_dense,
    solve_kkt_structured, SolveOptions, StageBlocks,
};
use edslab::models::{
    build_ti_costs, linear_dynamics, lq_chain, scalar_oracle, solve_steady_state, steady_data,
    steady_trajectory, time_invariant_problem, tracking_cost,
};
use edslab::Dimensions;
use edslab_cli::{run, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed <= limit,
        format!(
            "{detail}; {:.2}s of {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let inst = scalar_oracle();
    let rep = solve_equality_nlp(
        &inst.problem,
        &inst.data,
        &inst.warm_start,
        &SolveOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let w = &rep.solution;
    let got = [
        w.x[0][0],
        w.u[0][0],
        w.x[1][0],
        w.lambda_init[0],
        w.lambda[0][0],
    ];
    let want = [1.0, -0.5, 0.5, 3.0, 1.0];
    let err = got
        .iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max);
    check(err <= 1e-8, format!("max error {err:.2e}"))?;
    within(
        elapsed,
        Duration::from_secs(1),
        format!("max error {err:.2e}"),
    )
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = gaussian(rng, n, n);
    m.tr_mul(&m) + DMatrix::identity(n, n) * shift
}

/// Random time-varying LQ blocks with a positive definite stage Hessian.
fn random_lq_blocks(
    rng: &mut ChaCha8Rng,
    n: usize,
    nx: usize,
    nu: usize,
    n0: usize,
) -> StageBlocks {
    let mut q = Vec::new();
    let mut r = Vec::new();
    let mut s = Vec::new();
    for _ in 0..n {
        let h = random_pd(rng, nx + nu, 0.1);
        q.push(h.view((0, 0), (nx, nx)).into_owned());
        r.push(h.view((nx, nx), (nu, nu)).into_owned());
        s.push(h.view((0, nx), (nx, nu)).into_owned());
    }
    q.push(random_pd(rng, nx, 0.1));
    StageBlocks {
        q,
        r,
        s,
        e: vec![DMatrix::zeros(nx, 0); n + 1],
        f: vec![DMatrix::zeros(nu, 0); n],
        a: (0..n).map(|_| gaussian(rng, nx, nx) * 0.6).collect(),
        b: (0..n).map(|_| gaussian(rng, nx, nu)).collect(),
        g: vec![DMatrix::zeros(nx, 0); n],
        t: gaussian(rng, n0, nx),
    }
}

fn dense_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=20);
        let nx = rng.random_range(1..=4);
        let nu = rng.random_range(1..=3);
        let n0 = rng.random_range(0..=nx);
        let blocks = random_lq_blocks(&mut rng, n, nx, nu, n0);
        let g = DVector::from_fn(blocks.primal_len(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let c = DVector::from_fn(blocks.dual_len(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let dense = solve_kkt_dense(
            &assemble_hessian(&blocks),
            &assemble_jacobian(&blocks),
            &g,
            &c,
        )
        .map_err(|e| e.to_string())?;
        let fast = solve_kkt_structured(&blocks, &g, &c, 0.0).map_err(|e| e.to_string())?;
        let rel =
            |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm() / b.norm().max(f64::MIN_POSITIVE);
        worst = worst
            .max(rel(&fast.dz, &dense.dz))
            .max(rel(&fast.mu, &dense.mu));
    }
    let detail = format!("worst relative difference {worst:.2e} over 20 instances");
    check(worst <= 1e-8, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(10), detail)
}

/// Random matrix with spectral norm uniform in `(0, k]`.
fn bounded(rng: &mut ChaCha8Rng, r: usize, c: usize, k: f64) -> DMatrix<f64> {
    let m = gaussian(rng, r, c);
    if r == 0 || c == 0 {
        return m;
    }
    let norm = m.clone().svd(false, false).singular_values.max();
    let scale: f64 = rng.random_range(0.0..1.0);
    m * (k * (1.0 - scale) / norm)
}

fn blh_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_ratio: f64 = 0.0;
    for case in 0..20 {
        let k = [0.5, 1.0, 2.0][case % 3];
        let n = rng.random_range(1..=12);
        let (nx, nu, nd) = (
            rng.random_range(1..=4),
            rng.random_range(0..=3),
            rng.random_range(0..=3),
        );
        let n0 = rng.random_range(0..=nx);
        let mut b = |r: usize, c: usize| bounded(&mut rng, r, c, k);
        let blocks = StageBlocks {
            q: (0..=n).map(|_| b(nx, nx)).collect(),
            r: (0..n).map(|_| b(nu, nu)).collect(),
            s: (0..n).map(|_| b(nx, nu)).collect(),
            e: (0..=n).map(|_| b(nx, nd)).collect(),
            f: (0..n).map(|_| b(nu, nd)).collect(),
            a: (0..n).map(|_| b(nx, nx)).collect(),
            b: (0..n).map(|_| b(nx, nu)).collect(),
            g: (0..n).map(|_| b(nx, nd)).collect(),
            t: b(n0, nx),
        };
        if block_bound(&blocks) > k * (1.0 + 1e-12) {
            return Err(format!("generator exceeded K = {k}"));
        }
        let observed = blh_modulus_from_blocks(&blocks);
        let bound = blh_bound_from_k(k).map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(observed / bound);
    }
    check(
        worst_ratio <= 1.0,
        format!("largest observed/bound ratio {worst_ratio:.3} over 20 block sets"),
    )
}

fn horizon_moduli(
    blocks_for: impl Fn(usize) -> StageBlocks,
    modulus: impl Fn(&StageBlocks) -> Result<f64, String>,
) -> Result<Vec<f64>, String> {
    [10, 20, 40, 80]
        .iter()
        .map(|&n| modulus(&blocks_for(n)))
        .collect()
}

fn uniformity(good: &[f64], bad: &[f64]) -> (bool, String) {
    let good_min = good.iter().cloned().fold(f64::INFINITY, f64::min);
    let good_ok = good_min >= 0.5 * good[0];
    let bad_ratio = bad[3] / bad[0];
    let bad_ok = bad_ratio < 0.2;
    (
        good_ok && bad_ok,
        format!(
            "certified min/N10 = {:.3} (need >= 0.5), uncertified N80/N10 = {bad_ratio:.3} (need < 0.2)",
            good_min / good[0]
        ),
    )
}

fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, xs)
}

fn licq_contrast() -> Outcome {
    let start = Instant::now();
    let licq = |b: &StageBlocks| Ok(licq_modulus(&assemble_jacobian(b)));
    let di = horizon_moduli(
        |n| {
            StageBlocks::time_invariant(
                n,
                &m(2, 2, &[1.0, 1.0, 0.0, 1.0]),
                &m(2, 1, &[0.0, 1.0]),
                &DMatrix::identity(2, 2),
                &DMatrix::identity(1, 1),
                &DMatrix::identity(2, 2),
                &DMatrix::identity(2, 2),
            )
        },
        licq,
    )?;
    let one = DMatrix::identity(1, 1);
    let stuck = horizon_moduli(
        |n| StageBlocks::time_invariant(n, &one, &m(1, 1, &[0.0]), &one, &one, &one, &one),
        licq,
    )?;
    let (ok, detail) = uniformity(&di, &stuck);
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn sosc_contrast() -> Outcome {
    let start = Instant::now();
    let eye = DMatrix::<f64>::identity(2, 2);
    let sosc = |b: &StageBlocks| {
        sosc_modulus(&assemble_hessian(b), &assemble_jacobian(b))
            .map(|s| s.value())
            .map_err(|e| e.to_string())
    };
    let blocks = |q: DMatrix<f64>| {
        let eye = eye.clone();
        move |n| StageBlocks::time_invariant(n, &eye, &eye, &q, &eye, &q, &eye)
    };
    let observed = horizon_moduli(blocks(eye.clone()), sosc)?;
    let hidden = horizon_moduli(blocks(m(2, 2, &[1.0, 0.0, 0.0, 0.0])), sosc)?;
    let (ok, detail) = uniformity(&observed, &hidden);
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let len = rng.random_range(2..=12);
        let nx = rng.random_range(1..=4);
        let nu = rng.random_range(1..=3);
        let window = rng.random_range(0..len);
        let a: Vec<_> = (0..len).map(|_| gaussian(&mut rng, nx, nx)).collect();
        let b: Vec<_> = (0..len).map(|_| gaussian(&mut rng, nx, nu)).collect();
        let ctrl = scan_controllability_seq(&a, &b, window).map_err(|e| e.to_string())?;
        let (ad, qd) = dual_sequences(&a, &b);
        let obs = scan_observability_seq(&ad, &qd, window).map_err(|e| e.to_string())?;
        let scale = ctrl
            .values
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        // Window [i, i + W] of the original is window [M - i - W, M - i] of the dual.
        for (c, o) in ctrl.values.iter().zip(obs.values.iter().rev()) {
            worst = worst.max((c - o).abs() / scale);
        }
        if !duality_check_seq(&a, &b, window)
            .map_err(|e| e.to_string())?
            .agree
        {
            return Err("duality check reported disagreement".into());
        }
    }
    check(
        worst <= 1e-9,
        format!("worst relative discrepancy {worst:.2e} over 50 sequences"),
    )
}

fn usable_profiles(profiles: &[SensitivityProfile]) -> Result<(), String> {
    let failed = profiles.iter().filter(|p| !p.converged).count();
    check(failed == 0, format!("{failed} perturbed solves failed")).map(|_| ())
}

fn eds_lq() -> Outcome {
    let start = Instant::now();
    let inst = lq_chain(4, 2, 60, 0.9, 3).map_err(|e| e.to_string())?;
    let opts = ExperimentOptions::default();
    let base = solve_equality_nlp(&inst.problem, &inst.data, &inst.warm_start, &opts.solve)
        .map_err(|e| e.to_string())?
        .solution;
    let cert = build_report(
        &inst.problem,
        &base,
        &inst.data,
        WindowChoice::Search(8),
        WindowChoice::Search(8),
    )
    .map_err(|e| e.to_string())?;
    if !(cert.flags.controllable && cert.flags.observable) {
        return Err("chain is not certified controllable and observable".into());
    }
    let plan = ExperimentPlan {
        stages: vec![10, 30, 50],
        replicates: 5,
        magnitude: 0.1,
        seed: 7,
    };
    let profiles = run_experiments(&inst.problem, &inst.data, &base, &plan, &opts)
        .map_err(|e| e.to_string())?;
    usable_profiles(&profiles)?;
    let env = fit_upper_envelope(&profiles).map_err(|e| e.to_string())?;
    let ls = fit_decay(&profiles).map_err(|e| e.to_string())?;
    let bound = verify_eds_bound(&profiles, &env, 1.0);
    let detail = format!(
        "rho = {:.4} (<= 0.95), r2 = {:.3} (>= 0.8), bound violations {} of {}",
        env.rho, ls.r2, bound.violations, bound.checked
    );
    check(
        env.rho <= 0.95 && ls.r2 >= 0.8 && bound.holds(),
        detail.clone(),
    )?;
    within(start.elapsed(), Duration::from_secs(120), detail)
}

/// Largest `s_i / peak` over stages at least `distance` away from the perturbation.
fn far_field(p: &SensitivityProfile, distance: usize) -> f64 {
    let peak = p.s.iter().cloned().fold(0.0, f64::max);
    p.stages()
        .filter(|&(i, _)| (i - p.stage).unsigned_abs() >= distance)
        .map(|(_, v)| v / peak)
        .fold(0.0, f64::max)
}

fn quadrotor_contrast() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::from_json(
        r#"{
            "cases": [
                {"label": "case1", "model": {"name": "quadrotor", "q": 1.0, "b": 1.0}},
                {"label": "case2", "model": {"name": "quadrotor", "q": 0.0, "b": 0.0}}
            ],
            "horizon": 60, "stages": [30], "replicates": 5, "magnitude": 0.1, "seed": 7,
            "windows": {"max_window": 12}, "margin": 0.05
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let outcome = run(&cfg, Some(tmp.path()), None).map_err(|e| e.to_string())?;
    let [c1, c2] = outcome.cases.as_slice() else {
        return Err("expected two cases".into());
    };
    usable_profiles(&c1.profiles)?;
    usable_profiles(&c2.profiles)?;
    let (Some(f1), Some(f2)) = (&c1.fit, &c2.fit) else {
        return Err("missing fit".into());
    };
    let fit_rows = fs::read_to_string(tmp.path().join("fit.csv"))
        .map_err(|e| e.to_string())?
        .lines()
        .count()
        - 1;
    let summary = fs::read_to_string(tmp.path().join("summary.txt")).map_err(|e| e.to_string())?;
    let far1 = c1
        .profiles
        .iter()
        .map(|p| far_field(p, 15))
        .fold(0.0, f64::max);
    let far2 = c2
        .profiles
        .iter()
        .map(|p| far_field(p, 15))
        .fold(f64::INFINITY, f64::min);
    let obs_modulus = |c: &edslab_cli::CaseResult| match c.certificate.as_ref().map(|r| &r.obs) {
        Some(WindowOutcome::Passed { modulus, .. }) => Some(*modulus),
        Some(WindowOutcome::Failed { best, .. }) => Some(*best),
        None => None,
    };
    let (g1, g2) = (
        obs_modulus(c1).unwrap_or(0.0),
        obs_modulus(c2).unwrap_or(f64::NAN),
    );
    let obs1_pass = c1.certificate.as_ref().is_some_and(|r| r.obs.passed());
    let obs2_fail = c2.certificate.as_ref().is_some_and(|r| !r.obs.passed());
    let detail = format!(
        "rho1 = {:.4}, rho2 = {:.4}; far-field case1 max {:.3} (< 0.05), case2 min {:.3}; \
         obs modulus case1 {g1:.3e}, case2 {g2:.1e}; fit rows {fit_rows}",
        f1.rho, f2.rho, far1, far2
    );
    let ok = f1.rho + 0.05 < f2.rho
        && far1 < 0.05
        && far2 >= 0.05
        && obs1_pass
        && g1 > 0.0
        && obs2_fail
        && g2 <= 1e-10
        && fit_rows == 2
        && summary.contains("rho_case1 < rho_case2: true");
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(300), detail)
}

fn ti_corollary() -> Outcome {
    let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let b = m(2, 1, &[0.0, 1.0]);
    let q = DMatrix::identity(2, 2);
    let cost = tracking_cost(q.clone(), DMatrix::identity(1, 1), 0.5);
    let dynamics = linear_dynamics(a, b);
    let reference = DVector::from_vec(vec![1.0, 0.5]);
    let ss = solve_steady_state(
        &cost,
        &dynamics,
        &reference,
        &DVector::zeros(2),
        &DVector::zeros(1),
        &SolveOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for t in [DMatrix::identity(2, 2), m(1, 2, &[1.0, 0.0])] {
        let ti = build_ti_costs(&ss, &q, &t).map_err(|e| e.to_string())?;
        for n in [5, 20, 60] {
            let dims = Dimensions::uniform(n, 2, 1, t.nrows(), 2).map_err(|e| e.to_string())?;
            let p = time_invariant_problem(dims.clone(), &cost, &dynamics, &ti, t.clone())
                .map_err(|e| e.to_string())?;
            let w = steady_trajectory(&dims, &ss, &ti);
            let d = steady_data(&dims, &t, &ss, &reference);
            let r = kkt_residual(&p, &w, &d).map_err(|e| e.to_string())?;
            worst = worst.max(r.amax());
        }
    }
    check(
        worst <= 1e-8,
        format!("largest residual {worst:.2e} over N in {{5, 20, 60}}, full and partial T"),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("config.json");
    fs::write(
        &config,
        r#"{"model": {"name": "lq_chain", "nx": 3, "nu": 2, "spectral_radius": 0.9, "seed": 1},
            "horizon": 30, "stages": [-1, 5, 15, 30], "replicates": 4, "seed": 11}"#,
    )
    .map_err(|e| e.to_string())?;
    let run_with = |threads: &str, out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_edslab"))
            .env("EDSLAB_THREADS", threads)
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        check(
            status.status.success(),
            format!("exit {:?}", status.status.code()),
        )
        .map(|_| ())
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_with("1", &a)?;
    run_with("4", &b)?;
    for name in ["base_solution.csv", "profiles.csv", "fit.csv"] {
        let (x, y) = (fs::read(a.join(name)), fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{name} differs between runs")),
        }
    }
    Ok("base_solution.csv, profiles.csv, fit.csv identical across 1- and 4-thread runs".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle correctness", oracle),
        ("dense equivalence", dense_equivalence),
        ("mixed-Hessian bound", blh_lemma),
        ("controllability gives uniform LICQ", licq_contrast),
        ("observability gives uniform SOSC", sosc_contrast),
        ("duality", duality),
        ("decay on certified LQ chain", eds_lq),
        ("quadrotor contrast", quadrotor_contrast),
        ("time-invariant steady state", ti_corollary),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

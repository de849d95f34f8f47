//! Artifact writers. Floats are printed with 17 significant digits so that
//! downstream fits are reproducible from the files alone.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use edslab::eds::FitMode;

use crate::config::ValidatedConfig;
use crate::plot::{plot_panels, Panel};
use crate::{CaseResult, CliError, RunOutcome};

/// Bumped whenever a CSV header changes.
pub const CSV_SCHEMA: u32 = 1;
pub const BASE_HEADER: [&str; 5] = ["case", "stage", "block", "component", "value"];
pub const PROFILE_HEADER: [&str; 7] = [
    "case",
    "stage",
    "j",
    "replicate",
    "s",
    "magnitude",
    "converged",
];
pub const FIT_HEADER: [&str; 8] = [
    "case", "mode", "upsilon", "rho", "r2", "floor", "no_decay", "points",
];

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn mode_name(m: FitMode) -> &'static str {
    match m {
        FitMode::LeastSquares => "least_squares",
        FitMode::UpperEnvelope => "upper_envelope",
    }
}

fn write_base(path: &Path, cases: &[CaseResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BASE_HEADER)?;
    for case in cases {
        let Ok(rep) = &case.base else { continue };
        let sol = &rep.solution;
        let n = sol.horizon();
        let mut rows: Vec<(isize, &str, &nalgebra::DVector<f64>)> =
            vec![(-1, "lambda", &sol.lambda_init)];
        for i in 0..n {
            rows.push((i as isize, "x", &sol.x[i]));
            rows.push((i as isize, "u", &sol.u[i]));
            rows.push((i as isize, "lambda", &sol.lambda[i]));
        }
        rows.push((n as isize, "x", &sol.x[n]));
        for (stage, block, v) in rows {
            for (k, value) in v.iter().enumerate() {
                w.write_record([
                    case.label.as_str(),
                    &stage.to_string(),
                    block,
                    &k.to_string(),
                    &num(*value),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_profiles(path: &Path, cases: &[CaseResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PROFILE_HEADER)?;
    for case in cases {
        for prof in &case.profiles {
            for (i, s) in prof.stages() {
                w.write_record([
                    case.label.as_str(),
                    &i.to_string(),
                    &prof.stage.to_string(),
                    &prof.replicate.to_string(),
                    &num(s),
                    &num(prof.magnitude),
                    &prof.converged.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_fits(path: &Path, cases: &[CaseResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FIT_HEADER)?;
    for case in cases {
        let Some(f) = &case.fit else { continue };
        w.write_record([
            case.label.as_str(),
            mode_name(f.mode),
            &num(f.upsilon),
            &num(f.rho),
            &num(f.r2),
            &num(f.floor),
            &f.no_decay.to_string(),
            &f.points.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `[label]` sections of `key = value` certificate lines.
pub fn certificate_text(cases: &[CaseResult]) -> String {
    let mut out = String::new();
    for case in cases {
        let _ = writeln!(out, "[{}]", case.label);
        let _ = writeln!(out, "model = {}", case.model);
        match &case.certificate {
            Some(cert) => {
                for (k, v) in cert.key_values() {
                    let _ = writeln!(out, "{k} = {v}");
                }
            }
            None => {
                let _ = writeln!(out, "status = unavailable");
            }
        }
        out.push('\n');
    }
    out
}

fn summary_text(cfg: &ValidatedConfig, outcome: &RunOutcome) -> String {
    let mut out = String::new();
    for case in &outcome.cases {
        let _ = writeln!(out, "[{}]", case.label);
        let _ = writeln!(out, "model = {}", case.model);
        let _ = writeln!(out, "horizon = {}", case.instance.problem.horizon());
        match &case.base {
            Ok(rep) => {
                let _ = writeln!(out, "base_iterations = {}", rep.iterations);
                let _ = writeln!(out, "base_residual = {}", num(rep.residual));
            }
            Err(e) => {
                let _ = writeln!(out, "base_error = {e}");
            }
        }
        let _ = writeln!(out, "profiles = {}", case.profiles.len());
        let _ = writeln!(out, "converged = {}", case.converged());
        if let Some(f) = &case.fit {
            let _ = writeln!(out, "fit_mode = {}", mode_name(f.mode));
            let _ = writeln!(out, "rho = {}", num(f.rho));
            let _ = writeln!(out, "upsilon = {}", num(f.upsilon));
            let _ = writeln!(out, "r2 = {}", num(f.r2));
            let _ = writeln!(out, "no_decay = {}", f.no_decay);
        }
        if let Some(b) = &case.bound {
            let _ = writeln!(out, "bound_holds = {}", b.holds());
            let _ = writeln!(out, "bound_worst_ratio = {}", num(b.worst_ratio));
        }
        if let Some(msg) = &case.failure {
            let _ = writeln!(out, "failure = {msg}");
        }
        out.push('\n');
    }
    if let (Some(c), [a, b, ..]) = (&outcome.contrast, outcome.cases.as_slice()) {
        let _ = writeln!(
            out,
            "rho_{} < rho_{}: {}",
            a.label,
            b.label,
            c.rho_a < c.rho_b
        );
        let _ = writeln!(
            out,
            "rho_{} + {} < rho_{}: {}",
            a.label, cfg.margin, b.label, c.faster
        );
    }
    out
}

/// Writes every artifact into the output directory and returns the file
/// names in the order written; the manifest comes last.
pub fn write_all(cfg: &ValidatedConfig, outcome: &RunOutcome) -> Result<Vec<String>, CliError> {
    let dir = &outcome.output_dir;
    fs::create_dir_all(dir)?;
    let cases = &outcome.cases;
    let mut files = Vec::new();

    write_base(&dir.join("base_solution.csv"), cases)?;
    files.push("base_solution.csv".to_string());
    write_profiles(&dir.join("profiles.csv"), cases)?;
    files.push("profiles.csv".to_string());
    write_fits(&dir.join("fit.csv"), cases)?;
    files.push("fit.csv".to_string());
    fs::write(dir.join("certificate.txt"), certificate_text(cases))?;
    files.push("certificate.txt".to_string());

    let panels: Vec<Panel<'_>> = cases
        .iter()
        .filter(|c| !c.profiles.is_empty())
        .map(|c| Panel {
            label: &c.label,
            profiles: &c.profiles,
            fit: c.fit.as_ref(),
        })
        .collect();
    if !panels.is_empty() {
        fs::write(dir.join("decay.svg"), plot_panels(&panels)?)?;
        files.push("decay.svg".to_string());
    }
    fs::write(dir.join("summary.txt"), summary_text(cfg, outcome))?;
    files.push("summary.txt".to_string());

    let mut manifest = String::new();
    let _ = writeln!(manifest, "csv_schema = {CSV_SCHEMA}");
    let failed = outcome.failed();
    let _ = writeln!(
        manifest,
        "status = {}",
        if failed { "solver_failure" } else { "ok" }
    );
    let _ = writeln!(manifest, "partial = {failed}");
    let _ = writeln!(manifest, "seed = {}", cfg.seed);
    for case in cases {
        let _ = writeln!(
            manifest,
            "case = {} {} converged {}/{}",
            case.label,
            case.model,
            case.converged(),
            case.profiles.len()
        );
        if let Some(msg) = &case.failure {
            let _ = writeln!(manifest, "failure = {}: {msg}", case.label);
        }
    }
    for f in &files {
        let _ = writeln!(manifest, "file = {f}");
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    files.push("manifest.txt".to_string());
    Ok(files)
}

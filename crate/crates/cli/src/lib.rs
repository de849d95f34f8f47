//! Batch front end for `edslab`: JSON experiment configs in; CSV tables,
//! certificate reports and SVG decay plots out.

pub mod config;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

use edslab::certify::{build_report, CertificateReport};
use edslab::eds::{
    decay_contrast, fit, run_experiments, verify_eds_bound, BoundCheck, DecayContrast, DecayFit,
    ExperimentOptions, ExperimentPlan, SensitivityProfile,
};
use edslab::kkt::{solve_equality_nlp, SolveReport};
use edslab::models::ModelInstance;
use edslab::Error;

pub use config::{ExperimentConfig, ValidatedConfig};
pub use plot::{plot_decay, plot_panels, Panel};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 3 for configuration errors, 2 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Solver(_) => 2,
            CliError::Plot(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

/// Maps model and solver errors onto the CLI's exit classes.
fn classify(label: &str, e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Dimension { .. } => {
            CliError::Config(format!("{label}: {e}"))
        }
        _ => CliError::Solver(format!("{label}: {e}")),
    }
}

/// Everything computed for one case.
#[derive(Debug)]
pub struct CaseResult {
    pub label: String,
    pub model: &'static str,
    pub instance: ModelInstance,
    pub base: Result<SolveReport, String>,
    pub certificate: Option<CertificateReport>,
    pub profiles: Vec<SensitivityProfile>,
    pub fit: Option<DecayFit>,
    pub bound: Option<BoundCheck>,
    pub failure: Option<String>,
}

impl CaseResult {
    pub fn converged(&self) -> usize {
        self.profiles.iter().filter(|p| p.converged).count()
    }
}

/// Instantiates every case; all configuration problems surface here, before
/// anything is written.
pub fn instantiate(
    cfg: &ValidatedConfig,
) -> Result<Vec<(String, &'static str, ModelInstance)>, CliError> {
    cfg.cases
        .iter()
        .map(|c| {
            let inst = c
                .model
                .instantiate(c.horizon)
                .map_err(|e| classify(&c.label, e))?;
            Ok((c.label.clone(), c.model.name(), inst))
        })
        .collect()
}

/// Base solve, certificate, and (when `experiments` is set) the perturbation
/// batch and decay fit for one case.
pub fn evaluate_case(
    cfg: &ValidatedConfig,
    label: String,
    model: &'static str,
    instance: ModelInstance,
    experiments: bool,
) -> CaseResult {
    let mut result = CaseResult {
        label,
        model,
        base: Err(String::new()),
        certificate: None,
        profiles: Vec::new(),
        fit: None,
        bound: None,
        failure: None,
        instance,
    };
    let inst = &result.instance;
    let base = match solve_equality_nlp(&inst.problem, &inst.data, &inst.warm_start, &cfg.solve) {
        Ok(rep) => rep,
        Err(e) => {
            let msg = format!("base solve: {e}");
            result.base = Err(msg.clone());
            result.failure = Some(msg);
            return result;
        }
    };
    match build_report(
        &inst.problem,
        &base.solution,
        &inst.data,
        cfg.ctrl_window,
        cfg.obs_window,
    ) {
        Ok(r) => result.certificate = Some(r),
        Err(e) => result.failure = Some(format!("certificate: {e}")),
    }
    if experiments && !cfg.stages.is_empty() {
        let plan = ExperimentPlan {
            stages: cfg.stages.clone(),
            replicates: cfg.replicates,
            magnitude: cfg.magnitude,
            seed: cfg.seed,
        };
        let opts = ExperimentOptions {
            solve: cfg.solve,
            primal_only: cfg.primal_only,
        };
        match run_experiments(&inst.problem, &inst.data, &base.solution, &plan, &opts) {
            Ok(profiles) => {
                match fit(&profiles, cfg.fit_mode) {
                    Ok(f) => {
                        result.bound = Some(verify_eds_bound(&profiles, &f, 1.0));
                        result.fit = Some(f);
                    }
                    Err(e) => {
                        result.failure.get_or_insert(format!("fit: {e}"));
                    }
                }
                result.profiles = profiles;
            }
            Err(e) => {
                result.failure.get_or_insert(format!("experiments: {e}"));
            }
        }
    }
    result.base = Ok(base);
    result
}

/// Summary of a completed `run`.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub cases: Vec<CaseResult>,
    pub contrast: Option<DecayContrast>,
    pub files: Vec<String>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.cases.iter().any(|c| c.failure.is_some())
    }
}

/// Validates, computes every case, then writes all artifacts. Returns
/// `CliError::Solver` after writing whatever could be produced when any case
/// fails; configuration errors return before the output directory exists.
pub fn run(
    config: &ExperimentConfig,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<RunOutcome, CliError> {
    let mut cfg = config.validate()?;
    if cfg.stages.is_empty() {
        return Err(CliError::Config(
            "`run` needs at least one perturbed stage".into(),
        ));
    }
    if let Some(dir) = out {
        cfg.output_dir = dir.to_path_buf();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let instances = instantiate(&cfg)?;
    let cases: Vec<CaseResult> = instances
        .into_iter()
        .map(|(label, model, inst)| evaluate_case(&cfg, label, model, inst, true))
        .collect();
    let contrast = match cases.as_slice() {
        [a, b, ..] => match (&a.fit, &b.fit) {
            (Some(fa), Some(fb)) => Some(decay_contrast(fa, fb, cfg.margin)),
            _ => None,
        },
        _ => None,
    };
    let mut outcome = RunOutcome {
        output_dir: cfg.output_dir.clone(),
        cases,
        contrast,
        files: Vec::new(),
    };
    outcome.files = output::write_all(&cfg, &outcome)?;
    if outcome.failed() {
        let msgs: Vec<String> = outcome
            .cases
            .iter()
            .filter_map(|c| c.failure.as_ref().map(|f| format!("{}: {f}", c.label)))
            .collect();
        return Err(CliError::Solver(msgs.join("; ")));
    }
    Ok(outcome)
}

/// Base solve and certificate for every case, rendered as `key = value`
/// sections.
pub fn certify(config: &ExperimentConfig) -> Result<String, CliError> {
    let cfg = config.validate()?;
    let instances = instantiate(&cfg)?;
    let cases: Vec<CaseResult> = instances
        .into_iter()
        .map(|(label, model, inst)| evaluate_case(&cfg, label, model, inst, false))
        .collect();
    if let Some(c) = cases.iter().find(|c| c.failure.is_some()) {
        return Err(CliError::Solver(format!(
            "{}: {}",
            c.label,
            c.failure.as_deref().unwrap_or_default()
        )));
    }
    Ok(output::certificate_text(&cases))
}

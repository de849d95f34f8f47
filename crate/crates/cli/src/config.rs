use std::collections::HashSet;
use std::path::{Path, PathBuf};

use edslab::certify::WindowChoice;
use edslab::eds::FitMode;
use edslab::kkt::SolveOptions;
use edslab::models::{
    double_integrator, lq_chain, quadrotor_problem, scalar_oracle, ModelInstance, QuadrotorParams,
};
use serde::Deserialize;

use crate::CliError;

const DEFAULT_HORIZON: usize = 60;
const DEFAULT_MAX_WINDOW: usize = 20;

/// Experiment description read from a JSON file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A single model; mutually exclusive with `cases`.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Labelled models sharing every other setting.
    #[serde(default)]
    pub cases: Vec<CaseConfig>,
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Perturbed stages, each in `[-1, N]`.
    #[serde(default)]
    pub stages: Vec<isize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub windows: WindowsConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub fit_mode: FitModeConfig,
    #[serde(default)]
    pub primal_only: bool,
    /// Required gap between the decay rates of the first two cases.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_replicates() -> usize {
    1
}

fn default_magnitude() -> f64 {
    0.1
}

fn default_margin() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub label: String,
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    Quadrotor(QuadrotorSpec),
    LqChain(LqChainSpec),
    DoubleIntegrator,
    ScalarOracle,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorSpec {
    pub q: f64,
    pub b: f64,
    pub g: f64,
    pub dt: f64,
    pub altitude: f64,
}

impl Default for QuadrotorSpec {
    fn default() -> Self {
        let p = QuadrotorParams::default();
        Self {
            q: p.q,
            b: p.b,
            g: p.g,
            dt: p.dt,
            altitude: p.altitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqChainSpec {
    pub nx: usize,
    pub nu: usize,
    pub spectral_radius: f64,
    pub seed: u64,
}

impl Default for LqChainSpec {
    fn default() -> Self {
        Self {
            nx: 4,
            nu: 2,
            spectral_radius: 0.9,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Quadrotor(_) => "quadrotor",
            ModelSpec::LqChain(_) => "lq_chain",
            ModelSpec::DoubleIntegrator => "double_integrator",
            ModelSpec::ScalarOracle => "scalar_oracle",
        }
    }

    fn horizon(&self, requested: Option<usize>) -> Result<usize, CliError> {
        match (self, requested) {
            (ModelSpec::ScalarOracle, None | Some(1)) => Ok(1),
            (ModelSpec::ScalarOracle, Some(n)) => Err(CliError::Config(format!(
                "scalar_oracle has a fixed horizon of 1, got {n}"
            ))),
            (_, Some(n)) => Ok(n),
            (_, None) => Ok(DEFAULT_HORIZON),
        }
    }

    /// Builds the problem, its base data and a warm start.
    pub fn instantiate(&self, horizon: usize) -> edslab::Result<ModelInstance> {
        match self {
            ModelSpec::Quadrotor(s) => quadrotor_problem(&QuadrotorParams {
                q: s.q,
                b: s.b,
                g: s.g,
                dt: s.dt,
                altitude: s.altitude,
                horizon,
            }),
            ModelSpec::LqChain(s) => lq_chain(s.nx, s.nu, horizon, s.spectral_radius, s.seed),
            ModelSpec::DoubleIntegrator => double_integrator(horizon),
            ModelSpec::ScalarOracle => Ok(scalar_oracle()),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_kkt: Option<f64>,
    pub max_iter: Option<usize>,
    pub reg0: Option<f64>,
    pub reg_max: Option<f64>,
    pub ls_beta: Option<f64>,
    pub ls_sigma: Option<f64>,
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        let d = SolveOptions::default();
        SolveOptions {
            tol_kkt: self.tol_kkt.unwrap_or(d.tol_kkt),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            reg0: self.reg0.unwrap_or(d.reg0),
            reg_max: self.reg_max.unwrap_or(d.reg_max),
            ls_beta: self.ls_beta.unwrap_or(d.ls_beta),
            ls_sigma: self.ls_sigma.unwrap_or(d.ls_sigma),
        }
    }
}

/// `"auto"` or a fixed window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum WindowSetting {
    Fixed(usize),
    Named(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

impl Default for WindowSetting {
    fn default() -> Self {
        WindowSetting::Named(Auto::Auto)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsConfig {
    pub controllability: WindowSetting,
    pub observability: WindowSetting,
    /// Longest window tried by `"auto"`.
    pub max_window: usize,
}

impl Default for WindowsConfig {
    fn default() -> Self {
        Self {
            controllability: WindowSetting::default(),
            observability: WindowSetting::default(),
            max_window: DEFAULT_MAX_WINDOW,
        }
    }
}

fn choice(setting: WindowSetting, max_window: usize) -> WindowChoice {
    match setting {
        WindowSetting::Fixed(w) => WindowChoice::Fixed(w),
        WindowSetting::Named(Auto::Auto) => WindowChoice::Search(max_window),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModeConfig {
    LeastSquares,
    #[default]
    UpperEnvelope,
}

impl From<FitModeConfig> for FitMode {
    fn from(m: FitModeConfig) -> Self {
        match m {
            FitModeConfig::LeastSquares => FitMode::LeastSquares,
            FitModeConfig::UpperEnvelope => FitMode::UpperEnvelope,
        }
    }
}

/// One validated case.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub label: String,
    pub model: ModelSpec,
    pub horizon: usize,
}

/// A config whose invariants have been checked.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub cases: Vec<Case>,
    pub stages: Vec<isize>,
    pub replicates: usize,
    pub magnitude: f64,
    pub seed: u64,
    pub solve: SolveOptions,
    pub ctrl_window: WindowChoice,
    pub obs_window: WindowChoice,
    pub output_dir: PathBuf,
    pub fit_mode: FitMode,
    pub primal_only: bool,
    pub margin: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<ValidatedConfig, CliError> {
        let specs: Vec<(String, &ModelSpec)> = match (&self.model, self.cases.as_slice()) {
            (Some(m), []) => vec![("case1".to_string(), m)],
            (None, []) => return Err(CliError::Config("no model given".into())),
            (None, cases) => cases.iter().map(|c| (c.label.clone(), &c.model)).collect(),
            (Some(_), _) => {
                return Err(CliError::Config(
                    "give either `model` or `cases`, not both".into(),
                ))
            }
        };
        let mut seen = HashSet::new();
        let mut cases = Vec::with_capacity(specs.len());
        for (label, model) in specs {
            let valid_label = !label.is_empty()
                && label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid_label {
                return Err(CliError::Config(format!("invalid case label {label:?}")));
            }
            if !seen.insert(label.clone()) {
                return Err(CliError::Config(format!("duplicate case label {label:?}")));
            }
            let horizon = model.horizon(self.horizon)?;
            if horizon == 0 {
                return Err(CliError::Config("horizon must be at least 1".into()));
            }
            cases.push(Case {
                label,
                model: model.clone(),
                horizon,
            });
        }
        for case in &cases {
            if let Some(&j) = self
                .stages
                .iter()
                .find(|&&j| j < -1 || j > case.horizon as isize)
            {
                return Err(CliError::Config(format!(
                    "stage {j} outside [-1, {}] for case {}",
                    case.horizon, case.label
                )));
            }
        }
        if self.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(CliError::Config(
                "magnitude must be positive and finite".into(),
            ));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(CliError::Config("margin must be nonnegative".into()));
        }
        let solve = self.solver.options();
        solve
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(ValidatedConfig {
            cases,
            stages: self.stages.clone(),
            replicates: self.replicates,
            magnitude: self.magnitude,
            seed: self.seed,
            solve,
            ctrl_window: choice(self.windows.controllability, self.windows.max_window),
            obs_window: choice(self.windows.observability, self.windows.max_window),
            output_dir: self
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("edslab_out")),
            fit_mode: self.fit_mode.into(),
            primal_only: self.primal_only,
            margin: self.margin,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn validate(json: &str) -> Result<ValidatedConfig, CliError> {
        ExperimentConfig::from_json(json)?.validate()
    }

    #[test]
    fn minimal_config() {
        let c = validate(r#"{"model": {"name": "double_integrator"}, "stages": [0]}"#).unwrap();
        assert_eq!(c.cases[0].horizon, DEFAULT_HORIZON);
        assert_eq!(c.cases[0].label, "case1");
        assert_eq!(c.ctrl_window, WindowChoice::Search(DEFAULT_MAX_WINDOW));
        assert_eq!(c.fit_mode, FitMode::UpperEnvelope);
    }

    #[test]
    fn model_parameters_and_windows() {
        let c = validate(
            r#"{"cases": [{"label": "a", "model": {"name": "quadrotor", "q": 0.0}},
                          {"label": "b", "model": {"name": "lq_chain", "nx": 2}}],
                "horizon": 12, "stages": [-1, 12],
                "windows": {"controllability": 3, "observability": "auto"}}"#,
        )
        .unwrap();
        assert_eq!(
            c.cases[0].model,
            ModelSpec::Quadrotor(QuadrotorSpec {
                q: 0.0,
                ..Default::default()
            })
        );
        assert_eq!(
            c.cases[1].model,
            ModelSpec::LqChain(LqChainSpec {
                nx: 2,
                ..Default::default()
            })
        );
        assert_eq!(c.ctrl_window, WindowChoice::Fixed(3));
    }

    #[test]
    fn rejects_invalid_configs() {
        for json in [
            r#"{"stages": [0]}"#,
            r#"{"model": {"name": "pendulum"}}"#,
            r#"{"model": {"q": 1.0}}"#,
            r#"{"model": {"name": "quadrotor", "mass": 1.0}}"#,
            r#"{"model": {"name": "double_integrator"}, "horizon": 5, "stages": [6]}"#,
            r#"{"model": {"name": "double_integrator"}, "replicates": 0}"#,
            r#"{"model": {"name": "double_integrator"}, "magnitude": -1}"#,
            r#"{"model": {"name": "scalar_oracle"}, "horizon": 3}"#,
            r#"{"model": {"name": "double_integrator"}, "windows": {"controllability": "never"}}"#,
            r#"{"cases": [{"label": "x", "model": {"name": "scalar_oracle"}},
                          {"label": "x", "model": {"name": "scalar_oracle"}}]}"#,
            r#"{"model": {"name": "double_integrator"}, "solver": {"max_iter": 0}}"#,
            r#"{"model": {"name": "double_integrator"}, "unknown": 1}"#,
        ] {
            assert!(matches!(validate(json), Err(CliError::Config(_))), "{json}");
        }
    }
}

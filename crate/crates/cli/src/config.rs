//! JSON analysis configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ordinal_causal::nuisance::{ClipOptions, DEFAULT_EPS_F, DEFAULT_FOLDS, DEFAULT_TRIM};
use ordinal_causal::sensitivity::TauGrid;
use ordinal_causal::simulation::DgpSpec;
use ordinal_causal::{CopulaSpec, Estimand, Family, Mode};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub version: u32,
    pub input: Option<PathBuf>,
    pub columns: Option<Columns>,
    /// Raw outcome values in increasing order; position is the level.
    pub outcome_levels: Option<Vec<String>>,
    #[serde(default = "default_estimands")]
    pub estimands: Vec<Estimand>,
    pub copula: Option<CopulaConfig>,
    pub tau_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub breakeven: BreakevenConfig,
    pub simulation: Option<SimulationConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaConfig {
    pub family: Family,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
}

impl CopulaConfig {
    pub fn spec(&self) -> CliResult<CopulaSpec> {
        let fixed = matches!(self.family, Family::Independence | Family::FrechetLower | Family::FrechetUpper);
        let spec = match (self.tau, self.rho) {
            (None, None) if fixed => CopulaSpec::new(self.family, 0.0)?,
            (Some(t), None) if !fixed => CopulaSpec::from_tau(self.family, t)?,
            (None, Some(r)) if !fixed => CopulaSpec::new(self.family, r)?,
            _ if fixed => {
                return Err(CliError::Config(format!("copula {}: takes neither tau nor rho", self.family.name())))
            }
            _ => return Err(CliError::Config(format!("copula {}: give exactly one of tau or rho", self.family.name()))),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceModel {
    /// Logistic propensity and proportional-odds margins.
    #[default]
    Parametric,
    /// Cell frequencies within each distinct covariate row.
    Stratified,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFit {
    #[default]
    Pooled,
    PerArm,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    #[serde(default)]
    pub model: NuisanceModel,
    #[serde(default)]
    pub outcome: OutcomeFit,
    /// Known propensity replacing the fitted one.
    pub propensity: Option<f64>,
    #[serde(default = "default_trim")]
    pub trim: f64,
    #[serde(default = "default_eps_f")]
    pub eps_f: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self { model: NuisanceModel::default(), outcome: OutcomeFit::default(), propensity: None, trim: DEFAULT_TRIM, eps_f: DEFAULT_EPS_F }
    }
}

impl NuisanceConfig {
    pub fn clip(&self) -> ClipOptions {
        ClipOptions { trim: self.trim, eps_f: self.eps_f }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
    /// Per-unit influence values (estimate only).
    pub influence: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakevenConfig {
    /// Defaults to 0 for xi; required for psi and phi.
    pub null_value: Option<f64>,
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for BreakevenConfig {
    fn default() -> Self {
        Self { null_value: None, gamma_max: default_gamma_max(), tol: default_tol() }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Baseline,
    MisspecifiedPropensity,
    ModerateOverlap,
    StrongPrognostic,
    Unconditional,
    HeterogeneousTau { slope: f64 },
    HiddenConfounding { gamma: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimEstimator {
    pub label: String,
    pub copula: CopulaConfig,
    #[serde(default = "default_estimand")]
    pub estimand: Estimand,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: Scenario,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    /// Outcome levels with evenly spaced latent thresholds; the scenario's own when absent.
    pub levels: Option<usize>,
    /// Monte Carlo draws for the truth; exact quadrature when absent.
    pub truth_draws: Option<usize>,
    pub estimators: Vec<SimEstimator>,
}

impl SimulationConfig {
    pub fn dgp(&self) -> DgpSpec {
        let n = self.n;
        let mut spec = match self.scenario {
            Scenario::Baseline => DgpSpec::baseline(n),
            Scenario::MisspecifiedPropensity => DgpSpec::misspecified_propensity(n),
            Scenario::ModerateOverlap => DgpSpec::moderate_overlap(n),
            Scenario::StrongPrognostic => DgpSpec::strong_prognostic(n),
            Scenario::Unconditional => DgpSpec::unconditional(n),
            Scenario::HeterogeneousTau { slope } => DgpSpec::heterogeneous_tau(n, slope),
            Scenario::HiddenConfounding { gamma } => DgpSpec::hidden_confounding(n, gamma),
        };
        if let Some(l) = self.levels {
            spec.thresholds = ordinal_causal::simulation::even_thresholds(l);
        }
        spec
    }
}

fn default_estimands() -> Vec<Estimand> {
    vec![Estimand::Psi]
}
fn default_estimand() -> Estimand {
    Estimand::Psi
}
fn default_alpha() -> f64 {
    0.05
}
fn default_mode() -> Mode {
    Mode::OneStep
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_trim() -> f64 {
    DEFAULT_TRIM
}
fn default_eps_f() -> f64 {
    DEFAULT_EPS_F
}
fn default_gamma_max() -> f64 {
    10.0
}
fn default_tol() -> f64 {
    1e-3
}
fn default_n() -> usize {
    1000
}
fn default_reps() -> usize {
    200
}

/// Which subcommand a configuration is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Curve,
    Gamma,
    Simulate,
}

impl AnalysisConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        // serde_json messages carry the line and column
        let cfg: AnalysisConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {SCHEMA_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self, cmd: Command) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha {} outside (0, 0.5)", self.alpha));
        }
        if cmd == Command::Simulate {
            let Some(sim) = &self.simulation else {
                return bad("simulate needs a 'simulation' section".into());
            };
            if sim.n_reps < 2 {
                return bad(format!("simulation.n_reps must be at least 2, got {}", sim.n_reps));
            }
            if sim.estimators.is_empty() {
                return bad("simulation.estimators is empty".into());
            }
            if sim.levels.is_some_and(|l| l < 2) {
                return bad("simulation.levels must be at least 2".into());
            }
            for (i, est) in sim.estimators.iter().enumerate() {
                est.copula.spec().map_err(|e| CliError::Config(format!("simulation.estimators[{i}]: {e}")))?;
                if est.mode == Mode::CrossFit && est.folds < 2 {
                    return bad(format!("simulation.estimators[{i}]: folds must be at least 2"));
                }
            }
            sim.dgp().validate()?;
            return Ok(());
        }

        if self.columns.is_none() {
            return bad("'columns' is required".into());
        }
        if self.estimands.is_empty() {
            return bad("'estimands' is empty".into());
        }
        if let Some(levels) = &self.outcome_levels {
            if levels.len() < 2 {
                return bad("'outcome_levels' needs at least two values".into());
            }
            for (i, v) in levels.iter().enumerate() {
                if levels[..i].contains(v) {
                    return bad(format!("'outcome_levels' repeats '{v}'"));
                }
            }
        }
        if self.mode == Mode::CrossFit && self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        let n = &self.nuisance;
        if !(0.0..0.5).contains(&n.trim) || !(0.0..0.5).contains(&n.eps_f) {
            return bad("nuisance.trim and nuisance.eps_f must lie in [0, 0.5)".into());
        }
        if let Some(e) = n.propensity {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("nuisance.propensity {e} outside (0, 1)"));
            }
        }
        let copula = self.copula.as_ref().ok_or_else(|| CliError::Config("'copula' is required".into()))?;
        copula.spec()?;

        match cmd {
            Command::Curve => {
                if self.estimands.len() != 1 {
                    return bad("curve takes exactly one estimand".into());
                }
                self.tau_grid()?;
            }
            Command::Gamma => {
                if self.estimands.len() != 1 {
                    return bad("gamma takes exactly one estimand".into());
                }
                if self.mode == Mode::UnconditionalDr {
                    return bad("gamma bounds are defined for the conditional estimators only".into());
                }
                if !copula.family.is_differentiable() {
                    return bad(format!("gamma bounds need a smooth copula, not {}", copula.family.name()));
                }
                if let Some(g) = &self.gamma_grid {
                    if g.is_empty() || g.iter().any(|v| !(*v >= 1.0 && v.is_finite())) {
                        return bad("gamma_grid values must be finite and at least 1".into());
                    }
                }
                if self.tau_grid.is_some() {
                    self.tau_grid()?;
                }
                let b = &self.breakeven;
                if !(b.gamma_max >= 1.0 && b.gamma_max.is_finite()) || !(b.tol > 0.0) {
                    return bad("breakeven.gamma_max must be >= 1 and breakeven.tol positive".into());
                }
                self.null_value()?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn copula_spec(&self) -> CliResult<CopulaSpec> {
        self.copula.as_ref().ok_or_else(|| CliError::Config("'copula' is required".into()))?.spec()
    }

    /// The configured grid, or 0, 0.1, ..., 0.9 for the copula's family.
    pub fn tau_grid(&self) -> CliResult<TauGrid> {
        let family = self.copula.as_ref().ok_or_else(|| CliError::Config("'copula' is required".into()))?.family;
        let grid = match &self.tau_grid {
            Some(t) => TauGrid::new(family, t.clone()),
            None => TauGrid::standard(family),
        };
        grid.map_err(|e| CliError::Config(format!("tau_grid: {e}")))
    }

    pub fn null_value(&self) -> CliResult<f64> {
        match (self.breakeven.null_value, self.estimands[0]) {
            (Some(v), _) => Ok(v),
            (None, Estimand::Xi) => Ok(0.0),
            (None, e) => Err(CliError::Config(format!("breakeven.null_value is required for {e}"))),
        }
    }
}

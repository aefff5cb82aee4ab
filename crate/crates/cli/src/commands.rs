//! Subcommand implementations. Each returns the bytes to write so nothing
//! reaches disk before the computation has succeeded.

use std::path::{Path, PathBuf};

use serde::Serialize;

use ordinal_causal::estimands::{dr_unconditional_margins, estimate, frechet_envelope, unit_bounds};
use ordinal_causal::nuisance::{
    fit_crossfit, fit_full, make_folds, NuisanceLearner, NuisancePredictor, OutcomeModel, ParametricLearner,
    PropensityModel, RawNuisance, StratifiedLearner,
};
use ordinal_causal::sensitivity::{
    breakeven_gamma, breakeven_over_taus, default_gamma_grid, gamma_table, tau_curve, Breakeven, BreakevenStatus,
};
use ordinal_causal::simulation::{run_study, truth, EstimatorConfig, Truth};
use ordinal_causal::{Dataset, Estimand, EstimateResult, Mode, NuisanceFit};

use crate::config::{AnalysisConfig, Format, NuisanceConfig, NuisanceModel, OutcomeFit};
use crate::error::{CliError, CliResult};
use crate::input::read_dataset;
use crate::output::{csv_bytes, json_bytes};

/// Resolved flags that override the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
}

/// A file to write: target (None for stdout) and contents.
pub struct Artifact {
    pub path: Option<PathBuf>,
    pub bytes: Vec<u8>,
}

pub struct Context {
    pub cfg: AnalysisConfig,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    input: Option<PathBuf>,
}

impl Context {
    pub fn new(cfg: AnalysisConfig, ov: Overrides) -> Self {
        Context {
            out: ov.out.or_else(|| cfg.output.path.clone()),
            format: ov.format.or(cfg.output.format).unwrap_or_default(),
            seed: ov.seed.unwrap_or(cfg.seed),
            input: ov.input.or_else(|| cfg.input.clone()),
            cfg,
        }
    }

    fn data(&self) -> CliResult<Dataset> {
        let path = self.input.as_deref().ok_or_else(|| CliError::Config("no input: pass --input or set 'input'".into()))?;
        let cols = self.cfg.columns.as_ref().ok_or_else(|| CliError::Config("'columns' is required".into()))?;
        read_dataset(path, cols, self.cfg.outcome_levels.as_deref())
    }

    /// Nuisances for the configured mode: out-of-fold when cross-fitting.
    fn nuisances(&self, data: &Dataset) -> CliResult<NuisanceFit> {
        let learner = Learner::from_config(&self.cfg.nuisance);
        let clip = self.cfg.nuisance.clip();
        Ok(match self.cfg.mode {
            Mode::CrossFit => {
                let plan = make_folds(data.n(), self.cfg.folds, self.seed)?;
                fit_crossfit(data, &plan, &learner, clip)?
            }
            _ => fit_full(data, &learner, clip)?,
        })
    }
}

/// Configured learner with an optional known propensity.
struct Learner {
    inner: Box<dyn NuisanceLearner>,
    propensity: Option<f64>,
}

impl Learner {
    fn from_config(c: &NuisanceConfig) -> Self {
        let inner: Box<dyn NuisanceLearner> = match c.model {
            NuisanceModel::Parametric => Box::new(ParametricLearner {
                propensity: c.propensity.map_or(PropensityModel::Logistic, PropensityModel::Constant),
                outcome: match c.outcome {
                    OutcomeFit::Pooled => OutcomeModel::Pooled,
                    OutcomeFit::PerArm => OutcomeModel::PerArm,
                },
            }),
            NuisanceModel::Stratified => Box::new(StratifiedLearner),
        };
        Learner { inner, propensity: c.propensity }
    }
}

struct KnownPropensity {
    inner: Box<dyn NuisancePredictor>,
    e: Option<f64>,
}

impl NuisancePredictor for KnownPropensity {
    fn predict(&self, data: &Dataset) -> ordinal_causal::Result<RawNuisance> {
        let mut raw = self.inner.predict(data)?;
        if let Some(e) = self.e {
            raw.e.iter_mut().for_each(|v| *v = e);
        }
        Ok(raw)
    }
}

impl NuisanceLearner for Learner {
    fn fit(&self, train: &Dataset) -> ordinal_causal::Result<Box<dyn NuisancePredictor>> {
        Ok(Box::new(KnownPropensity { inner: self.inner.fit(train)?, e: self.propensity }))
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

fn envelope(data: &Dataset, fit: &NuisanceFit, estimand: Estimand, mode: Mode) -> CliResult<(f64, f64)> {
    Ok(match mode {
        Mode::UnconditionalDr => {
            let (f1, f0) = dr_unconditional_margins(data, fit)?;
            unit_bounds(estimand, &f1, &f0)
        }
        _ => frechet_envelope(fit, estimand),
    })
}

fn check_finite(r: &EstimateResult) -> CliResult<()> {
    if r.raw_point.is_finite() && r.se.is_finite() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("non-finite {} estimate", r.estimand)))
    }
}

#[derive(Debug, Serialize)]
pub struct EstimateRow {
    pub estimand: Estimand,
    pub mode: Mode,
    pub family: &'static str,
    pub tau: f64,
    pub rho: f64,
    pub point: f64,
    pub raw_point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub env_low: f64,
    pub env_high: f64,
    pub n: usize,
    pub levels: usize,
}

pub fn estimate_cmd(ctx: &Context) -> CliResult<Vec<Artifact>> {
    let data = ctx.data()?;
    let spec = ctx.cfg.copula_spec()?;
    let fit = ctx.nuisances(&data)?;
    let mut rows = Vec::new();
    let mut influence = Vec::new();
    for &est in &ctx.cfg.estimands {
        let r = estimate(&data, &fit, &spec, est, ctx.cfg.alpha, ctx.cfg.mode)?;
        check_finite(&r)?;
        let (env_low, env_high) = envelope(&data, &fit, est, ctx.cfg.mode)?;
        rows.push(EstimateRow {
            estimand: est,
            mode: r.mode,
            family: spec.family().name(),
            tau: spec.tau(),
            rho: spec.rho(),
            point: r.point,
            raw_point: r.raw_point,
            se: r.se,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            alpha: r.alpha,
            env_low,
            env_high,
            n: data.n(),
            levels: data.levels(),
        });
        influence.push(r.if_values);
    }
    let bytes = match ctx.format {
        Format::Csv => csv_bytes(&rows)?,
        Format::Json => json_bytes(&serde_json::json!({ "results": rows }))?,
    };
    let mut out = vec![Artifact { path: ctx.out.clone(), bytes }];
    if let Some(path) = &ctx.cfg.output.influence {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(ctx.cfg.estimands.iter().map(|e| format!("if_{e}")));
        let csv_err = |e: csv::Error| CliError::Numeric(format!("csv serialization: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..data.n() {
            let mut rec = vec![i.to_string()];
            rec.extend(influence.iter().map(|v| v[i].to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Numeric(format!("csv serialization: {e}")))?;
        out.push(Artifact { path: Some(path.clone()), bytes });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct CurveRow {
    pub tau: f64,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub env_low: f64,
    pub env_high: f64,
}

pub fn curve_cmd(ctx: &Context) -> CliResult<Vec<Artifact>> {
    let grid = ctx.cfg.tau_grid()?;
    let data = ctx.data()?;
    let fit = ctx.nuisances(&data)?;
    let est = ctx.cfg.estimands[0];
    let curve = tau_curve(&data, &fit, &grid, est, ctx.cfg.alpha, ctx.cfg.mode)?;
    let (env_low, env_high) = curve.envelope;
    let mut rows = Vec::with_capacity(grid.taus().len());
    for (r, &tau) in curve.estimates.iter().zip(grid.taus()) {
        check_finite(r)?;
        rows.push(CurveRow { tau, point: r.point, se: r.se, ci_low: r.ci_low, ci_high: r.ci_high, env_low, env_high });
    }
    let bytes = match ctx.format {
        Format::Csv => csv_bytes(&rows)?,
        Format::Json => json_bytes(&serde_json::json!({
            "estimand": est,
            "family": grid.family().name(),
            "mode": ctx.cfg.mode,
            "rows": rows,
        }))?,
    };
    Ok(vec![Artifact { path: ctx.out.clone(), bytes }])
}

#[derive(Debug, Serialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub tau: f64,
    pub lower: f64,
    pub lower_se: f64,
    pub lower_ci_low: f64,
    pub upper: f64,
    pub upper_se: f64,
    pub upper_ci_high: f64,
}

#[derive(Debug, Serialize)]
pub struct BreakevenReport {
    pub estimand: Estimand,
    pub null_value: f64,
    pub gamma_max: f64,
    pub gamma: f64,
    pub tau: f64,
    pub status: BreakevenStatus,
    /// Per-tau values when a tau grid was searched.
    pub per_tau: Vec<Breakeven>,
}

/// `out.csv` -> `out.breakeven.json`.
pub fn breakeven_path(out: &Path) -> PathBuf {
    out.with_extension("breakeven.json")
}

pub fn gamma_cmd(ctx: &Context) -> CliResult<Vec<Artifact>> {
    let cfg = &ctx.cfg;
    let spec = cfg.copula_spec()?;
    let null_value = cfg.null_value()?;
    let gammas = cfg.gamma_grid.clone().unwrap_or_else(default_gamma_grid);
    let taus = match &cfg.tau_grid {
        Some(_) => Some(cfg.tau_grid()?),
        None => None,
    };
    let data = ctx.data()?;
    let fit = ctx.nuisances(&data)?;
    let est = cfg.estimands[0];
    let b = &cfg.breakeven;

    let table = gamma_table(&data, &fit, &spec, &gammas, est, cfg.alpha)?;
    let rows: Vec<GammaRow> = table
        .iter()
        .map(|g| GammaRow {
            gamma: g.gamma,
            tau: g.tau,
            lower: g.lower.point,
            lower_se: g.lower.se,
            lower_ci_low: g.lower.ci_low,
            upper: g.upper.point,
            upper_se: g.upper.se,
            upper_ci_high: g.upper.ci_high,
        })
        .collect();
    if let Some(r) = table.iter().find(|g| !(g.lower.raw_point.is_finite() && g.upper.raw_point.is_finite())) {
        return Err(CliError::Numeric(format!("non-finite endpoint at gamma {}", r.gamma)));
    }

    let (best, per_tau) = match &taus {
        Some(grid) => {
            let per = grid
                .taus()
                .iter()
                .map(|&t| {
                    breakeven_over_taus(&data, &fit, grid.family(), &[t], est, null_value, b.gamma_max, b.tol, cfg.alpha)
                })
                .collect::<ordinal_causal::Result<Vec<_>>>()?;
            // curve-level value: the smallest over the grid
            let best = *per.iter().min_by(|x, y| x.gamma.total_cmp(&y.gamma)).expect("validated nonempty grid");
            (best, per)
        }
        None => (breakeven_gamma(&data, &fit, &spec, est, null_value, b.gamma_max, b.tol, cfg.alpha)?, Vec::new()),
    };
    let report = BreakevenReport {
        estimand: est,
        null_value,
        gamma_max: b.gamma_max,
        gamma: best.gamma,
        tau: best.tau,
        status: best.status,
        per_tau,
    };

    Ok(match ctx.format {
        Format::Json => vec![Artifact {
            path: ctx.out.clone(),
            bytes: json_bytes(&serde_json::json!({ "table": rows, "breakeven": report }))?,
        }],
        Format::Csv => {
            let report_path = ctx.out.as_deref().map(breakeven_path);
            let mut out = vec![Artifact { path: ctx.out.clone(), bytes: csv_bytes(&rows)? }];
            match report_path {
                Some(p) => out.push(Artifact { path: Some(p), bytes: json_bytes(&report)? }),
                None => eprintln!(
                    "breakeven gamma {:.4} at tau {:.3} ({:?})",
                    report.gamma, report.tau, report.status
                ),
            }
            out
        }
    })
}

/// Study summary; bias, SD, RMSE and mean SE are multiplied by 1000.
#[derive(Debug, Serialize)]
pub struct StudyRow {
    pub label: String,
    pub estimand: Estimand,
    pub n_reps: usize,
    pub truth: f64,
    pub bias_x1000: f64,
    pub sd_x1000: f64,
    pub rmse_x1000: f64,
    pub mean_se_x1000: f64,
    pub coverage: f64,
    pub sbc: f64,
}

pub fn simulate_cmd(ctx: &Context) -> CliResult<Vec<Artifact>> {
    let sim = ctx.cfg.simulation.as_ref().ok_or_else(|| CliError::Config("'simulation' is required".into()))?;
    let spec = sim.dgp();
    let estimators = sim
        .estimators
        .iter()
        .map(|e| Ok(EstimatorConfig::new(e.label.clone(), e.copula.spec()?, e.estimand, e.mode).with_folds(e.folds)))
        .collect::<CliResult<Vec<_>>>()?;
    let truth = match sim.truth_draws {
        Some(d) => truth(&spec, d, ctx.seed ^ 0x7275_7468)?,
        None => Truth::from_quadrature(&spec)?,
    };
    let report = run_study(&spec, &estimators, &truth, sim.n_reps, ctx.cfg.alpha, ctx.seed)?;
    if report.failed > 0 {
        eprintln!(
            "{} of {} replications failed; first: {}",
            report.failed,
            report.requested,
            report.first_failure.as_deref().unwrap_or("")
        );
    }
    let rows: Vec<StudyRow> = report
        .rows
        .iter()
        .zip(&estimators)
        .map(|(r, e)| StudyRow {
            label: r.label.clone(),
            estimand: e.estimand,
            n_reps: r.n_reps,
            truth: r.truth,
            bias_x1000: 1e3 * r.bias,
            sd_x1000: 1e3 * r.sd,
            rmse_x1000: 1e3 * r.rmse,
            mean_se_x1000: 1e3 * r.mean_se,
            coverage: r.coverage,
            sbc: r.envelope_containment,
        })
        .collect();
    let bytes = match ctx.format {
        Format::Csv => csv_bytes(&rows)?,
        Format::Json => json_bytes(&serde_json::json!({
            "rows": rows,
            "requested": report.requested,
            "failed": report.failed,
            "truth_draws": truth.draws,
        }))?,
    };
    Ok(vec![Artifact { path: ctx.out.clone(), bytes }])
}

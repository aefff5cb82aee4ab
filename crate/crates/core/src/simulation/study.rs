//! Replication studies: bias, SD, RMSE, coverage and envelope containment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::dgp::{generate_with, DgpSpec, Truth};
use crate::copula::CopulaSpec;
use crate::error::{Error, Result};
use crate::estimands::{dr_unconditional_margins, estimate, frechet_envelope, unit_bounds, Estimand, Mode};
use crate::nuisance::{fit_crossfit, fit_full, make_folds, ClipOptions, NuisanceFit, ParametricLearner};
use crate::numeric::CompensatedSum;

/// Maximum fraction of failed replications tolerated by `run_study`.
pub const FAILURE_BUDGET: f64 = 0.02;

/// One estimator in a study: copula, estimand and estimation mode. All use
/// logistic propensity and pooled proportional-odds working models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub label: String,
    pub copula: CopulaSpec,
    pub estimand: Estimand,
    pub mode: Mode,
    /// Fold count when `mode` is cross-fitting.
    pub folds: usize,
}

impl EstimatorConfig {
    pub fn new(label: impl Into<String>, copula: CopulaSpec, estimand: Estimand, mode: Mode) -> Self {
        EstimatorConfig { label: label.into(), copula, estimand, mode, folds: crate::nuisance::DEFAULT_FOLDS }
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }
}

/// Summary of one estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub label: String,
    pub truth: f64,
    pub bias: f64,
    /// Replication standard deviation, n-1 denominator.
    pub sd: f64,
    /// Root mean squared error, so `rmse^2 = bias^2 + sd^2 (R-1)/R`.
    pub rmse: f64,
    pub mean_se: f64,
    /// Percent of intervals covering the truth.
    pub coverage: f64,
    /// Percent of intervals inside the coupling envelope.
    pub envelope_containment: f64,
    pub n_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub rows: Vec<StudyResult>,
    pub requested: usize,
    pub failed: usize,
    /// Message of the first failure, if any.
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    point: f64,
    se: f64,
    covered: bool,
    contained: bool,
}

/// RNG of replication `rep`: one ChaCha stream per replication.
pub fn replication_rng(master_seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep as u64);
    rng
}

fn one_replication(
    spec: &DgpSpec,
    estimators: &[EstimatorConfig],
    truth: &Truth,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Draw>> {
    let sim = generate_with(spec, rng)?;
    let data = &sim.data;
    let fold_seed: u64 = rng.random();
    let learner = ParametricLearner::default();
    let clip = ClipOptions::default();
    let mut full: Option<NuisanceFit> = None;
    let mut oof: Vec<(usize, NuisanceFit)> = Vec::new();
    let mut out = Vec::with_capacity(estimators.len());
    for est in estimators {
        let fit = match est.mode {
            Mode::CrossFit => {
                if !oof.iter().any(|(k, _)| *k == est.folds) {
                    let plan = make_folds(data.n(), est.folds, fold_seed)?;
                    oof.push((est.folds, fit_crossfit(data, &plan, &learner, clip)?));
                }
                &oof.iter().find(|(k, _)| *k == est.folds).expect("inserted").1
            }
            _ => {
                if full.is_none() {
                    full = Some(fit_full(data, &learner, clip)?);
                }
                full.as_ref().expect("inserted")
            }
        };
        let r = estimate(data, fit, &est.copula, est.estimand, alpha, est.mode)?;
        let (lo, hi) = match est.mode {
            Mode::UnconditionalDr => {
                let (f1, f0) = dr_unconditional_margins(data, fit)?;
                unit_bounds(est.estimand, &f1, &f0)
            }
            _ => frechet_envelope(fit, est.estimand),
        };
        if !(r.raw_point.is_finite() && r.se.is_finite()) {
            return Err(Error::Numeric(format!("{}: non-finite estimate", est.label)));
        }
        out.push(Draw {
            point: r.point,
            se: r.se,
            covered: r.covers(truth.get(est.estimand)),
            contained: lo <= r.ci_low && r.ci_high <= hi,
        });
    }
    Ok(out)
}

fn summarize(label: &str, truth: f64, draws: &[Draw]) -> StudyResult {
    let r = draws.len() as f64;
    let mean = |f: &dyn Fn(&Draw) -> f64| {
        let mut s = CompensatedSum::default();
        draws.iter().for_each(|d| s.add(f(d)));
        s.value() / r
    };
    let avg = mean(&|d| d.point);
    let var = if draws.len() > 1 { mean(&|d| (d.point - avg).powi(2)) * r / (r - 1.0) } else { 0.0 };
    StudyResult {
        label: label.to_string(),
        truth,
        bias: avg - truth,
        sd: var.sqrt(),
        rmse: mean(&|d| (d.point - truth).powi(2)).sqrt(),
        mean_se: mean(&|d| d.se),
        coverage: 100.0 * mean(&|d| d.covered as u8 as f64),
        envelope_containment: 100.0 * mean(&|d| d.contained as u8 as f64),
        n_reps: draws.len(),
    }
}

/// Runs `n_reps` replications in parallel. Replication `r` draws from
/// `replication_rng(seed, r)`, so the table is independent of scheduling.
/// Failed replications are dropped as a whole; above `FAILURE_BUDGET` the
/// study fails.
pub fn run_study(
    spec: &DgpSpec,
    estimators: &[EstimatorConfig],
    truth: &Truth,
    n_reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<StudyReport> {
    spec.validate()?;
    if n_reps < 2 {
        return Err(Error::InvalidData(format!("a study needs at least 2 replications, got {n_reps}")));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidData("no estimators configured".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidData(format!("alpha {alpha} outside (0, 1)")));
    }
    let reps: Vec<Result<Vec<Draw>>> = (0..n_reps)
        .into_par_iter()
        .map(|r| one_replication(spec, estimators, truth, alpha, &mut replication_rng(seed, r)))
        .collect();
    let mut ok = Vec::with_capacity(n_reps);
    let mut failed = 0;
    let mut first_failure = None;
    for r in reps {
        match r {
            Ok(d) => ok.push(d),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > FAILURE_BUDGET * n_reps as f64 || ok.len() < 2 {
        return Err(Error::StudyFailed { failed, total: n_reps });
    }
    let rows = estimators
        .iter()
        .enumerate()
        .map(|(j, est)| {
            let draws: Vec<Draw> = ok.iter().map(|d| d[j]).collect();
            summarize(&est.label, truth.get(est.estimand), &draws)
        })
        .collect();
    Ok(StudyReport { rows, requested: n_reps, failed, first_failure })
}

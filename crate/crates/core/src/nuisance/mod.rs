//! Propensity and conditional-margin nuisances, and cross-fitting.

mod dataset;
pub mod logistic;
pub mod polr;
mod stratified;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use dataset::Dataset;
pub use logistic::{fit_logistic, LogisticFit};
pub use polr::{fit_prop_odds, PropOddsFit};
pub use stratified::StratifiedLearner;

pub const DEFAULT_TRIM: f64 = 0.01;
pub const DEFAULT_EPS_F: f64 = 1e-6;
pub const DEFAULT_FOLDS: usize = 10;

/// Clipping applied when nuisance predictions are materialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipOptions {
    /// Propensities are clipped to `[trim, 1 - trim]`.
    pub trim: f64,
    /// Margins are clipped to `[eps_f, 1 - eps_f]`.
    pub eps_f: f64,
}

impl Default for ClipOptions {
    fn default() -> Self {
        Self { trim: DEFAULT_TRIM, eps_f: DEFAULT_EPS_F }
    }
}

/// Unclipped predictions; margins are row-major `n x (L-1)`.
#[derive(Debug, Clone, Default)]
pub struct RawNuisance {
    pub e: Vec<f64>,
    pub f1: Vec<f64>,
    pub f0: Vec<f64>,
}

/// Something that can be trained on a dataset.
pub trait NuisanceLearner: Send + Sync {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn NuisancePredictor>>;

    fn name(&self) -> &'static str;
}

/// A trained nuisance model.
pub trait NuisancePredictor: Send + Sync {
    /// Predictions for every row of `data`; only covariates are read.
    fn predict(&self, data: &Dataset) -> Result<RawNuisance>;
}

/// Per-unit propensities and conditional margins, clipped and monotone.
///
/// Row `i` of `f1`/`f0` holds `F_a(k|X_i)` for `k = 0..L-2`; the boundary
/// values `F(-1) = 0` and `F(L-1) = 1` are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    levels: usize,
    e: Vec<f64>,
    f1: Vec<f64>,
    f0: Vec<f64>,
}

impl NuisanceFit {
    pub fn new(levels: usize, raw: RawNuisance, clip: ClipOptions) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidData("need at least two outcome levels".into()));
        }
        let m = levels - 1;
        let n = raw.e.len();
        if raw.f1.len() != n * m || raw.f0.len() != n * m {
            return Err(Error::InvalidData(format!(
                "margin matrices must be {n} x {m}, got {} and {} entries",
                raw.f1.len(),
                raw.f0.len()
            )));
        }
        if !(0.0..0.5).contains(&clip.trim) || !(0.0..0.5).contains(&clip.eps_f) {
            return Err(Error::InvalidData("trim and eps_f must lie in [0, 0.5)".into()));
        }
        let all = raw.e.iter().chain(&raw.f1).chain(&raw.f0);
        if let Some(v) = all.clone().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite nuisance prediction {v}")));
        }
        let e = raw.e.iter().map(|v| v.clamp(clip.trim, 1.0 - clip.trim)).collect();
        let fix = |mut f: Vec<f64>| {
            for row in f.chunks_mut(m) {
                let mut run = 0.0f64;
                for v in row {
                    run = run.max(v.clamp(clip.eps_f, 1.0 - clip.eps_f));
                    *v = run;
                }
            }
            f
        };
        Ok(Self { levels, e, f1: fix(raw.f1), f0: fix(raw.f0) })
    }

    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn f1_row(&self, i: usize) -> &[f64] {
        let m = self.levels - 1;
        &self.f1[i * m..(i + 1) * m]
    }

    pub fn f0_row(&self, i: usize) -> &[f64] {
        let m = self.levels - 1;
        &self.f0[i * m..(i + 1) * m]
    }

    pub(crate) fn check_against(&self, data: &Dataset) -> Result<()> {
        if self.n() != data.n() || self.levels != data.levels() {
            return Err(Error::InvalidData(format!(
                "nuisance fit is {} units x {} levels but data is {} x {}",
                self.n(),
                self.levels,
                data.n(),
                data.levels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityModel {
    Logistic,
    /// Known design propensity, e.g. a randomized trial.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    /// One proportional-odds fit with treatment as an extra covariate.
    Pooled,
    /// Separate proportional-odds fits in each arm.
    PerArm,
}

/// Logistic propensity plus proportional-odds margins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricLearner {
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
}

impl Default for ParametricLearner {
    fn default() -> Self {
        Self { propensity: PropensityModel::Logistic, outcome: OutcomeModel::Pooled }
    }
}

enum OutcomeFit {
    Pooled(PropOddsFit),
    PerArm([PropOddsFit; 2]),
}

enum PropensityFit {
    Logistic(LogisticFit),
    Constant(f64),
}

struct ParametricPredictor {
    propensity: PropensityFit,
    outcome: OutcomeFit,
    levels: usize,
}

fn arm_subset(data: &Dataset, arm: u8) -> (DMatrix<f64>, Vec<usize>) {
    let idx: Vec<usize> = (0..data.n()).filter(|&i| data.a()[i] == arm).collect();
    (data.x().select_rows(&idx), idx.iter().map(|&i| data.y()[i]).collect())
}

impl NuisanceLearner for ParametricLearner {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn NuisancePredictor>> {
        let propensity = match self.propensity {
            PropensityModel::Logistic => PropensityFit::Logistic(fit_logistic(train.x(), train.a())?),
            PropensityModel::Constant(e) => {
                if !(e > 0.0 && e < 1.0) {
                    return Err(Error::InvalidData(format!("constant propensity {e} outside (0, 1)")));
                }
                PropensityFit::Constant(e)
            }
        };
        let l = train.levels();
        let outcome = match self.outcome {
            OutcomeModel::Pooled => {
                let p = train.p();
                let mut x = DMatrix::zeros(train.n(), p + 1);
                x.columns_mut(0, p).copy_from(train.x());
                for i in 0..train.n() {
                    x[(i, p)] = train.a()[i] as f64;
                }
                OutcomeFit::Pooled(fit_prop_odds(&x, train.y(), l)?)
            }
            OutcomeModel::PerArm => {
                let fit_arm = |arm: u8| {
                    let (x, y) = arm_subset(train, arm);
                    fit_prop_odds(&x, &y, l).map_err(|e| match e {
                        Error::EmptyLevel { level, .. } => {
                            Error::EmptyLevel { level, context: format!(" (arm {arm})") }
                        }
                        other => other,
                    })
                };
                OutcomeFit::PerArm([fit_arm(0)?, fit_arm(1)?])
            }
        };
        Ok(Box::new(ParametricPredictor { propensity, outcome, levels: l }))
    }

    fn name(&self) -> &'static str {
        "parametric"
    }
}

impl NuisancePredictor for ParametricPredictor {
    fn predict(&self, data: &Dataset) -> Result<RawNuisance> {
        let x = data.x();
        let n = data.n();
        let m = self.levels - 1;
        let e = match &self.propensity {
            PropensityFit::Logistic(fit) => fit.predict(x),
            PropensityFit::Constant(c) => vec![*c; n],
        };
        let mut f1 = Vec::with_capacity(n * m);
        let mut f0 = Vec::with_capacity(n * m);
        for i in 0..n {
            match &self.outcome {
                OutcomeFit::Pooled(fit) => {
                    let p = x.ncols();
                    let base: f64 = (0..p).map(|j| fit.beta[j] * x[(i, j)]).sum();
                    f1.extend(fit.cdf_row(base + fit.beta[p]));
                    f0.extend(fit.cdf_row(base));
                }
                OutcomeFit::PerArm([fit0, fit1]) => {
                    f1.extend(fit1.cdf_row(fit1.linear_predictor(x, i)));
                    f0.extend(fit0.cdf_row(fit0.linear_predictor(x, i)));
                }
            }
        }
        Ok(RawNuisance { e, f1, f0 })
    }
}

/// Clip and monotonize a trained model's predictions on `data`.
pub fn predict_nuisance(model: &dyn NuisancePredictor, data: &Dataset, clip: ClipOptions) -> Result<NuisanceFit> {
    NuisanceFit::new(data.levels(), model.predict(data)?, clip)
}

/// Train on all of `data` and predict on the same units.
pub fn fit_full(data: &Dataset, learner: &dyn NuisanceLearner, clip: ClipOptions) -> Result<NuisanceFit> {
    predict_nuisance(learner.fit(data)?.as_ref(), data, clip)
}

/// Random partition of `0..n` into `k` near-equal folds (0-based labels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Seeded shuffle cut into contiguous blocks whose sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidData(format!("need 2 <= folds <= n, got {k} folds for {n} units")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos * k / n;
    }
    Ok(FoldPlan { k, assignment, seed })
}

/// Out-of-fold nuisances: each unit's values come from a model trained on
/// the other folds. Folds are fitted in parallel; the result does not depend
/// on the thread count.
pub fn fit_crossfit(
    data: &Dataset,
    plan: &FoldPlan,
    learner: &dyn NuisanceLearner,
    clip: ClipOptions,
) -> Result<NuisanceFit> {
    if plan.assignment.len() != data.n() {
        return Err(Error::InvalidData("fold plan does not match the dataset size".into()));
    }
    let m = data.levels() - 1;
    let per_fold: Vec<Result<(Vec<usize>, RawNuisance)>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let wrap = |e: Error| Error::Fold { fold, source: Box::new(e) };
            let train = data.subset(&plan.complement(fold));
            let members = plan.members(fold);
            let test = data.subset(&members);
            let model = learner.fit(&train).map_err(wrap)?;
            let raw = model.predict(&test).map_err(wrap)?;
            Ok((members, raw))
        })
        .collect();
    let n = data.n();
    let mut raw = RawNuisance { e: vec![0.0; n], f1: vec![0.0; n * m], f0: vec![0.0; n * m] };
    for res in per_fold {
        let (members, part) = res?;
        for (r, &i) in members.iter().enumerate() {
            raw.e[i] = part.e[r];
            raw.f1[i * m..(i + 1) * m].copy_from_slice(&part.f1[r * m..(r + 1) * m]);
            raw.f0[i * m..(i + 1) * m].copy_from_slice(&part.f0[r * m..(r + 1) * m]);
        }
    }
    NuisanceFit::new(data.levels(), raw, clip)
}

#[cfg(test)]
mod tests;

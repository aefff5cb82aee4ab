//! Identification functionals, their margin derivatives, and the one-step,
//! cross-fitted and unconditional doubly robust estimators.

mod envelope;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::copula::CopulaSpec;
use crate::error::{Error, Result};
use crate::nuisance::{fit_crossfit, make_folds, ClipOptions, Dataset, NuisanceFit, NuisanceLearner};
use crate::numeric::{stable_mean, stable_sum, z_crit, CompensatedSum};
pub use envelope::{frechet_envelope, unit_bounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// pr{Y(1) > Y(0)}
    Psi,
    /// pr{Y(1) >= Y(0)}
    Phi,
    /// phi + psi - 1
    Xi,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Psi, Estimand::Phi, Estimand::Xi];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Psi => "psi",
            Estimand::Phi => "phi",
            Estimand::Xi => "xi",
        }
    }

    /// Logical range of the estimand.
    pub fn range(self) -> (f64, f64) {
        match self {
            Estimand::Xi => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psi" => Ok(Estimand::Psi),
            "phi" => Ok(Estimand::Phi),
            "xi" => Ok(Estimand::Xi),
            _ => Err(Error::InvalidData(format!("unknown estimand '{s}' (expected psi, phi or xi)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneStep,
    CrossFit,
    UnconditionalDr,
}

/// A point estimate with its influence-function inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub estimand: Estimand,
    pub copula: CopulaSpec,
    pub mode: Mode,
    /// Raw estimate clipped to the estimand's range.
    pub point: f64,
    pub raw_point: f64,
    pub se: f64,
    /// Interval on the raw scale.
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    /// Centered per-unit influence values.
    #[serde(skip)]
    pub if_values: Vec<f64>,
}

impl EstimateResult {
    pub(crate) fn from_influence(
        estimand: Estimand,
        copula: CopulaSpec,
        mode: Mode,
        alpha: f64,
        raw_point: f64,
        if_values: Vec<f64>,
    ) -> Self {
        let n = if_values.len() as f64;
        let var = stable_sum(&if_values.iter().map(|v| v * v).collect::<Vec<_>>()) / n;
        let se = (var / n).sqrt();
        let z = z_crit(alpha);
        let (lo, hi) = estimand.range();
        EstimateResult {
            estimand,
            copula,
            mode,
            point: raw_point.clamp(lo, hi),
            raw_point,
            se,
            ci_low: raw_point - z * se,
            ci_high: raw_point + z * se,
            alpha,
            if_values,
        }
    }

    /// Estimate from uncentered per-unit scores: point is their mean.
    pub(crate) fn from_scores(
        estimand: Estimand,
        copula: CopulaSpec,
        mode: Mode,
        alpha: f64,
        scores: Vec<f64>,
    ) -> Self {
        let raw = stable_mean(&scores);
        let mut ifs = scores;
        ifs.iter_mut().for_each(|v| *v -= raw);
        Self::from_influence(estimand, copula, mode, alpha, raw, ifs)
    }

    /// `xi = psi + phi - 1` with summed influence values.
    pub(crate) fn combine_xi(psi: &EstimateResult, phi: &EstimateResult) -> Self {
        let raw = psi.raw_point + phi.raw_point - 1.0;
        let ifs = psi.if_values.iter().zip(&phi.if_values).map(|(a, b)| a + b).collect();
        Self::from_influence(Estimand::Xi, psi.copula, psi.mode, psi.alpha, raw, ifs)
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// `F(k)` with the conventions `F(-1) = 0` and `F(L-1) = 1`.
#[inline]
pub(crate) fn margin(row: &[f64], k: isize) -> f64 {
    if k < 0 {
        0.0
    } else if k as usize >= row.len() {
        1.0
    } else {
        row[k as usize]
    }
}

/// Joint cell probabilities of (Y(1), Y(0)) given margins; row index is the
/// Y(1) level.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    levels: usize,
    pi: Vec<f64>,
}

impl CellGrid {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn pi(&self, k: usize, j: usize) -> f64 {
        self.pi[k * self.levels + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.levels).map(|k| (0..self.levels).map(|j| self.pi(k, j)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.levels).map(|j| (0..self.levels).map(|k| self.pi(k, j)).sum()).collect()
    }
}

fn check_row(row: &[f64]) -> Result<()> {
    for (i, w) in row.windows(2).enumerate() {
        if w[1] < w[0] - 1e-12 {
            return Err(Error::InconsistentMargins { index: i + 1, prev: w[0], next: w[1] });
        }
    }
    if let Some(i) = row.iter().position(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
        return Err(Error::InconsistentMargins { index: i, prev: row[i], next: row[i] });
    }
    Ok(())
}

/// Rectangle increments of the copula over the ordinal grid.
pub fn cell_grid(f1_row: &[f64], f0_row: &[f64], spec: &CopulaSpec) -> Result<CellGrid> {
    check_row(f1_row)?;
    check_row(f0_row)?;
    if f1_row.len() != f0_row.len() {
        return Err(Error::InvalidData("margin rows differ in length".into()));
    }
    let l = f1_row.len() + 1;
    let mut pi = Vec::with_capacity(l * l);
    let mut worst = 0.0f64;
    for k in 0..l as isize {
        for j in 0..l as isize {
            let raw = spec.rectangle_raw(margin(f1_row, k), margin(f1_row, k - 1), margin(f0_row, j), margin(f0_row, j - 1));
            worst = worst.min(raw);
            pi.push(raw.max(0.0));
        }
    }
    let total: f64 = pi.iter().sum();
    let dev = (total - 1.0).abs();
    if worst < -1e-12 || dev > 1e-8 {
        return Err(Error::InvalidCells(worst.min(-dev).abs()));
    }
    if dev > 0.0 {
        pi.iter_mut().for_each(|p| *p /= total);
    }
    Ok(CellGrid { levels: l, pi })
}

/// Lower triangle (psi), lower triangle plus diagonal (phi), or their
/// combination (xi) of a cell grid.
pub fn m_value(estimand: Estimand, cells: &CellGrid) -> f64 {
    let l = cells.levels;
    let below: f64 = (0..l).flat_map(|k| (0..k).map(move |j| (k, j))).map(|(k, j)| cells.pi(k, j)).sum();
    let diag: f64 = (0..l).map(|k| cells.pi(k, k)).sum();
    match estimand {
        Estimand::Psi => below,
        Estimand::Phi => below + diag,
        Estimand::Xi => 2.0 * below + diag - 1.0,
    }
}

/// The identification functional evaluated directly from margins through
/// its telescoped form.
pub fn m_from_margins(estimand: Estimand, f1_row: &[f64], f0_row: &[f64], spec: &CopulaSpec) -> f64 {
    let l = f1_row.len() as isize + 1;
    let c = |k: isize, j: isize| spec.cdf(margin(f1_row, k), margin(f0_row, j));
    match estimand {
        Estimand::Psi => {
            let mut s = 0.0;
            for k in 1..l {
                s += c(k, k - 1) - c(k - 1, k - 1);
            }
            s
        }
        Estimand::Phi => {
            let mut s = 0.0;
            for k in 0..l {
                s += c(k, k) - c(k - 1, k);
            }
            s
        }
        Estimand::Xi => {
            m_from_margins(Estimand::Psi, f1_row, f0_row, spec) + m_from_margins(Estimand::Phi, f1_row, f0_row, spec)
                - 1.0
        }
    }
}

/// Derivatives of `m` with respect to `F_1(k)` and `F_0(k)`, k = 0..L-2.
#[derive(Debug, Clone, PartialEq)]
pub struct Deltas {
    pub d1: Vec<f64>,
    pub d0: Vec<f64>,
}

pub fn delta_coeffs(estimand: Estimand, f1_row: &[f64], f0_row: &[f64], spec: &CopulaSpec) -> Result<Deltas> {
    if !spec.family().is_differentiable() {
        return Err(Error::UnsupportedCopula(spec.family()));
    }
    Ok(deltas_unchecked(estimand, f1_row, f0_row, spec))
}

pub(crate) fn deltas_unchecked(estimand: Estimand, f1_row: &[f64], f0_row: &[f64], spec: &CopulaSpec) -> Deltas {
    let m = f1_row.len();
    let f1 = |k: isize| margin(f1_row, k);
    let f0 = |k: isize| margin(f0_row, k);
    let c1 = |u: f64, v: f64| spec.partial_u(u, v);
    let c0 = |u: f64, v: f64| spec.partial_v(u, v);
    let mut d1 = Vec::with_capacity(m);
    let mut d0 = Vec::with_capacity(m);
    for k in 0..m as isize {
        let (a, b) = match estimand {
            Estimand::Psi => (
                c1(f1(k), f0(k - 1)) - c1(f1(k), f0(k)),
                c0(f1(k + 1), f0(k)) - c0(f1(k), f0(k)),
            ),
            Estimand::Phi => (
                c1(f1(k), f0(k)) - c1(f1(k), f0(k + 1)),
                c0(f1(k), f0(k)) - c0(f1(k - 1), f0(k)),
            ),
            Estimand::Xi => (
                c1(f1(k), f0(k - 1)) - c1(f1(k), f0(k + 1)),
                c0(f1(k + 1), f0(k)) - c0(f1(k - 1), f0(k)),
            ),
        };
        d1.push(a);
        d0.push(b);
    }
    Deltas { d1, d0 }
}

/// Per-unit efficient score
/// `m + h (A - e) + w_A sum_k W_Ak {1(Y <= k) - p_Ak}` with `w_1 = 1/e`,
/// `w_0 = 1/(1 - e)`. The one-step estimator uses `h = 0`, `W = Delta`,
/// `p = F`; the Gamma endpoints reuse this exact arithmetic.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn unit_score(m: f64, h: f64, a: u8, e: f64, y: usize, w1: &[f64], w0: &[f64], p1: &[f64], p0: &[f64]) -> f64 {
    let (w, p, weight) = if a == 1 { (w1, p1, 1.0 / e) } else { (w0, p0, 1.0 / (1.0 - e)) };
    let mut resid = 0.0;
    for k in 0..w.len() {
        let ind = if y <= k { 1.0 } else { 0.0 };
        resid += w[k] * (ind - p[k]);
    }
    m + h * (a as f64 - e) + weight * resid
}

fn check_inputs(data: &Dataset, fit: &NuisanceFit, spec: &CopulaSpec, alpha: f64) -> Result<()> {
    fit.check_against(data)?;
    if !spec.family().is_differentiable() {
        return Err(Error::UnsupportedCopula(spec.family()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidData(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn scored(data: &Dataset, fit: &NuisanceFit, spec: &CopulaSpec, estimand: Estimand, alpha: f64, mode: Mode) -> EstimateResult {
    let scores = (0..data.n())
        .map(|i| {
            let (f1, f0) = (fit.f1_row(i), fit.f0_row(i));
            let m = m_from_margins(estimand, f1, f0, spec);
            let d = deltas_unchecked(estimand, f1, f0, spec);
            unit_score(m, 0.0, data.a()[i], fit.e()[i], data.y()[i], &d.d1, &d.d0, f1, f0)
        })
        .collect();
    EstimateResult::from_scores(estimand, *spec, mode, alpha, scores)
}

pub(crate) fn score_estimate(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    estimand: Estimand,
    alpha: f64,
    mode: Mode,
) -> Result<EstimateResult> {
    check_inputs(data, fit, spec, alpha)?;
    Ok(match estimand {
        Estimand::Xi => {
            let psi = scored(data, fit, spec, Estimand::Psi, alpha, mode);
            let phi = scored(data, fit, spec, Estimand::Phi, alpha, mode);
            EstimateResult::combine_xi(&psi, &phi)
        }
        e => scored(data, fit, spec, e, alpha, mode),
    })
}

/// One-step estimator with nuisances fitted on the full sample.
pub fn one_step(data: &Dataset, fit: &NuisanceFit, spec: &CopulaSpec, estimand: Estimand, alpha: f64) -> Result<EstimateResult> {
    score_estimate(data, fit, spec, estimand, alpha, Mode::OneStep)
}

/// Cross-fitted one-step estimator: out-of-fold nuisances, same scores.
#[allow(clippy::too_many_arguments)]
pub fn cross_fit(
    data: &Dataset,
    folds: usize,
    seed: u64,
    spec: &CopulaSpec,
    estimand: Estimand,
    alpha: f64,
    learner: &dyn NuisanceLearner,
    clip: ClipOptions,
) -> Result<EstimateResult> {
    let plan = make_folds(data.n(), folds, seed)?;
    let fit = fit_crossfit(data, &plan, learner, clip)?;
    cross_fit_with(data, &fit, spec, estimand, alpha)
}

/// Cross-fitted estimate from already assembled out-of-fold nuisances.
pub fn cross_fit_with(
    data: &Dataset,
    oof: &NuisanceFit,
    spec: &CopulaSpec,
    estimand: Estimand,
    alpha: f64,
) -> Result<EstimateResult> {
    score_estimate(data, oof, spec, estimand, alpha, Mode::CrossFit)
}

/// AIPW estimates of the unconditional margins `F_a(k)`, before clipping,
/// together with each unit's augmented term.
struct DrMargins {
    raw1: Vec<f64>,
    raw0: Vec<f64>,
    // per-unit augmented values, row-major n x (L-1)
    aug1: Vec<f64>,
    aug0: Vec<f64>,
}

fn dr_margins(data: &Dataset, fit: &NuisanceFit) -> DrMargins {
    let n = data.n();
    let m = data.levels() - 1;
    let mut aug1 = Vec::with_capacity(n * m);
    let mut aug0 = Vec::with_capacity(n * m);
    for i in 0..n {
        let (a, y, e) = (data.a()[i], data.y()[i], fit.e()[i]);
        for k in 0..m {
            let ind = if y <= k { 1.0 } else { 0.0 };
            let f1 = fit.f1_row(i)[k];
            let f0 = fit.f0_row(i)[k];
            aug1.push(f1 + if a == 1 { (ind - f1) / e } else { 0.0 });
            aug0.push(f0 + if a == 0 { (ind - f0) / (1.0 - e) } else { 0.0 });
        }
    }
    let col_mean = |v: &[f64], k: usize| {
        let mut acc = CompensatedSum::default();
        for i in 0..n {
            acc.add(v[i * m + k]);
        }
        acc.value() / n as f64
    };
    let raw1 = (0..m).map(|k| col_mean(&aug1, k)).collect();
    let raw0 = (0..m).map(|k| col_mean(&aug0, k)).collect();
    DrMargins { raw1, raw0, aug1, aug0 }
}

fn monotone_unit(raw: &[f64]) -> Vec<f64> {
    let mut run = 0.0f64;
    raw.iter()
        .map(|v| {
            run = run.max(v.clamp(0.0, 1.0));
            run
        })
        .collect()
}

/// Doubly robust margins `F_a^dr(k)` for k = 0..L-2 after clipping to
/// [0, 1] and monotonizing.
pub fn dr_unconditional_margins(data: &Dataset, fit: &NuisanceFit) -> Result<(Vec<f64>, Vec<f64>)> {
    fit.check_against(data)?;
    let dr = dr_margins(data, fit);
    Ok((monotone_unit(&dr.raw1), monotone_unit(&dr.raw0)))
}

fn dr_single(dr: &DrMargins, spec: &CopulaSpec, estimand: Estimand, alpha: f64, n: usize) -> EstimateResult {
    let f1 = monotone_unit(&dr.raw1);
    let f0 = monotone_unit(&dr.raw0);
    let point = m_from_margins(estimand, &f1, &f0, spec);
    let d = deltas_unchecked(estimand, &f1, &f0, spec);
    let m = f1.len();
    let ifs = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for k in 0..m {
                s += d.d1[k] * (dr.aug1[i * m + k] - dr.raw1[k]);
                s += d.d0[k] * (dr.aug0[i * m + k] - dr.raw0[k]);
            }
            s
        })
        .collect();
    EstimateResult::from_influence(estimand, *spec, Mode::UnconditionalDr, alpha, point, ifs)
}

/// Copula applied to doubly robust unconditional margins.
pub fn unconditional_dr(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    estimand: Estimand,
    alpha: f64,
) -> Result<EstimateResult> {
    check_inputs(data, fit, spec, alpha)?;
    let dr = dr_margins(data, fit);
    let n = data.n();
    Ok(match estimand {
        Estimand::Xi => {
            let psi = dr_single(&dr, spec, Estimand::Psi, alpha, n);
            let phi = dr_single(&dr, spec, Estimand::Phi, alpha, n);
            EstimateResult::combine_xi(&psi, &phi)
        }
        e => dr_single(&dr, spec, e, alpha, n),
    })
}

/// Dispatch to the estimator for `mode`. Cross-fitting here means the
/// supplied fit already holds out-of-fold predictions.
pub fn estimate(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    estimand: Estimand,
    alpha: f64,
    mode: Mode,
) -> Result<EstimateResult> {
    match mode {
        Mode::OneStep | Mode::CrossFit => score_estimate(data, fit, spec, estimand, alpha, mode),
        Mode::UnconditionalDr => unconditional_dr(data, fit, spec, estimand, alpha),
    }
}

#[cfg(test)]
mod tests;

//! Bounds under a Rosenbaum-type model: a latent `U` restores
//! unconfoundedness and changes the treatment odds by at most a factor Gamma.
//!
//! The unidentified counterfactual margin `pr{Y(a) <= k | A = 1-a, x}` lies
//! in `[r-(p), r+(p)]` for the observed `p = pr(Y <= k | A = a, x)`, so the
//! causal margins lie between `G-` and `G+`. Because `m` decreases in the
//! treated margins and increases in the control margins, the lower endpoint
//! pairs `F+_1` with `F-_0` and the upper endpoint the reverse.

use rayon::prelude::*;
use serde::Serialize;

use crate::copula::{CopulaSpec, Family};
use crate::error::{Error, Result};
use crate::estimands::{deltas_unchecked, m_from_margins, unit_score, Estimand, EstimateResult, Mode};
use crate::nuisance::{Dataset, NuisanceFit};

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

fn r_pair(p: f64, gamma: f64) -> (f64, f64) {
    if gamma == 1.0 {
        return (p, p);
    }
    (p / (p + gamma * (1.0 - p)), gamma * p / (gamma * p + 1.0 - p))
}

fn r_deriv_pair(p: f64, gamma: f64) -> (f64, f64) {
    let lo = gamma - (gamma - 1.0) * p;
    let hi = 1.0 + (gamma - 1.0) * p;
    (gamma / (lo * lo), gamma / (hi * hi))
}

/// `(r-(p), r+(p))`.
pub fn r_gamma(p: f64, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    Ok(r_pair(p, gamma))
}

/// Derivatives of `(r-, r+)` in `p`.
pub fn r_gamma_deriv(p: f64, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    Ok(r_deriv_pair(p, gamma))
}

/// `(G, dG/de, dG/dp)` for arm `arm` using `r+` when `plus`, else `r-`.
/// At Gamma = 1 this is exactly `(p, 0, 1)`.
fn g_unchecked(arm: u8, plus: bool, e: f64, p: f64, gamma: f64) -> (f64, f64, f64) {
    if gamma == 1.0 {
        return (p, 0.0, 1.0);
    }
    let (rm, rp) = r_pair(p, gamma);
    let (dm, dp) = r_deriv_pair(p, gamma);
    let (r, rd) = if plus { (rp, dp) } else { (rm, dm) };
    if arm == 1 {
        (e * p + (1.0 - e) * r, p - r, e + (1.0 - e) * rd)
    } else {
        ((1.0 - e) * p + e * r, r - p, 1.0 - e + e * rd)
    }
}

/// Endpoint margin transform `G+-_a(e, p)` with its partial derivatives.
pub fn g_transform(arm: u8, plus: bool, e: f64, p: f64, gamma: f64) -> Result<(f64, f64, f64)> {
    check_gamma(gamma)?;
    Ok(g_unchecked(arm, plus, e, p, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    // whether arm `arm` uses the r+ transform on this side
    fn plus(self, arm: u8) -> bool {
        (self == Side::Lower) == (arm == 1)
    }
}

/// Elementwise margin bounds, row-major n x (L-1).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginBounds {
    pub gamma: f64,
    levels: usize,
    pub lower1: Vec<f64>,
    pub upper1: Vec<f64>,
    pub lower0: Vec<f64>,
    pub upper0: Vec<f64>,
}

impl MarginBounds {
    pub fn levels(&self) -> usize {
        self.levels
    }

    fn row<'a>(&self, v: &'a [f64], i: usize) -> &'a [f64] {
        let m = self.levels - 1;
        &v[i * m..(i + 1) * m]
    }

    /// Treated and control rows used by the endpoint on `side`.
    pub fn endpoint_rows(&self, side: Side, i: usize) -> (&[f64], &[f64]) {
        match side {
            Side::Lower => (self.row(&self.upper1, i), self.row(&self.lower0, i)),
            Side::Upper => (self.row(&self.lower1, i), self.row(&self.upper0, i)),
        }
    }
}

pub fn margin_bounds(fit: &NuisanceFit, gamma: f64) -> Result<MarginBounds> {
    check_gamma(gamma)?;
    let n = fit.n();
    let cap = n * (fit.levels() - 1);
    let mut out = MarginBounds {
        gamma,
        levels: fit.levels(),
        lower1: Vec::with_capacity(cap),
        upper1: Vec::with_capacity(cap),
        lower0: Vec::with_capacity(cap),
        upper0: Vec::with_capacity(cap),
    };
    for i in 0..n {
        let e = fit.e()[i];
        for &p in fit.f1_row(i) {
            out.lower1.push(g_unchecked(1, false, e, p, gamma).0);
            out.upper1.push(g_unchecked(1, true, e, p, gamma).0);
        }
        for &p in fit.f0_row(i) {
            out.lower0.push(g_unchecked(0, false, e, p, gamma).0);
            out.upper0.push(g_unchecked(0, true, e, p, gamma).0);
        }
    }
    Ok(out)
}

fn require_smooth(spec: &CopulaSpec) -> Result<()> {
    if spec.family().is_differentiable() {
        Ok(())
    } else {
        Err(Error::UnsupportedCopula(spec.family()))
    }
}

/// `(m-, m+)` for unit `i`.
pub fn endpoint_m(estimand: Estimand, bounds: &MarginBounds, i: usize, spec: &CopulaSpec) -> Result<(f64, f64)> {
    require_smooth(spec)?;
    let m = |side| {
        let (f1, f0) = bounds.endpoint_rows(side, i);
        m_from_margins(estimand, f1, f0, spec)
    };
    Ok((m(Side::Lower), m(Side::Upper)))
}

/// Per-unit endpoint pieces: the map `m`, the propensity coefficient `H` and
/// the outcome coefficients `W_1k`, `W_0k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointTerms {
    pub m: f64,
    pub h: f64,
    pub w1: Vec<f64>,
    pub w0: Vec<f64>,
}

/// Endpoint pieces at observed-data nuisances `(e, p_1, p_0)` for psi or phi.
/// For xi they are the sums of the psi and phi pieces (with `m` shifted by -1).
#[allow(clippy::too_many_arguments)]
pub fn endpoint_coefficients(
    estimand: Estimand,
    side: Side,
    e: f64,
    p1: &[f64],
    p0: &[f64],
    spec: &CopulaSpec,
    gamma: f64,
) -> Result<EndpointTerms> {
    check_gamma(gamma)?;
    require_smooth(spec)?;
    if estimand != Estimand::Xi {
        return Ok(endpoint_terms(estimand, side, e, p1, p0, spec, gamma));
    }
    let a = endpoint_terms(Estimand::Psi, side, e, p1, p0, spec, gamma);
    let b = endpoint_terms(Estimand::Phi, side, e, p1, p0, spec, gamma);
    let add = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u + v).collect();
    Ok(EndpointTerms { m: a.m + b.m - 1.0, h: a.h + b.h, w1: add(&a.w1, &b.w1), w0: add(&a.w0, &b.w0) })
}

pub(crate) fn endpoint_terms(
    estimand: Estimand,
    side: Side,
    e: f64,
    p1: &[f64],
    p0: &[f64],
    spec: &CopulaSpec,
    gamma: f64,
) -> EndpointTerms {
    let g1: Vec<_> = p1.iter().map(|&p| g_unchecked(1, side.plus(1), e, p, gamma)).collect();
    let g0: Vec<_> = p0.iter().map(|&p| g_unchecked(0, side.plus(0), e, p, gamma)).collect();
    let f1: Vec<f64> = g1.iter().map(|g| g.0).collect();
    let f0: Vec<f64> = g0.iter().map(|g| g.0).collect();
    let m = m_from_margins(estimand, &f1, &f0, spec);
    let d = deltas_unchecked(estimand, &f1, &f0, spec);
    let mut h = 0.0;
    for k in 0..f1.len() {
        h += d.d1[k] * g1[k].1 + d.d0[k] * g0[k].1;
    }
    let w1 = d.d1.iter().zip(&g1).map(|(d, g)| d * g.2).collect();
    let w0 = d.d0.iter().zip(&g0).map(|(d, g)| d * g.2).collect();
    EndpointTerms { m, h, w1, w0 }
}

fn side_estimate(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    gamma: f64,
    estimand: Estimand,
    side: Side,
    alpha: f64,
) -> EstimateResult {
    let single = |est| {
        let scores = (0..data.n())
            .map(|i| {
                let (p1, p0, e) = (fit.f1_row(i), fit.f0_row(i), fit.e()[i]);
                let t = endpoint_terms(est, side, e, p1, p0, spec, gamma);
                unit_score(t.m, t.h, data.a()[i], e, data.y()[i], &t.w1, &t.w0, p1, p0)
            })
            .collect();
        EstimateResult::from_scores(est, *spec, Mode::OneStep, alpha, scores)
    };
    match estimand {
        Estimand::Xi => EstimateResult::combine_xi(&single(Estimand::Psi), &single(Estimand::Phi)),
        e => single(e),
    }
}

/// One-step estimates of both endpoints at one (Gamma, copula) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaBoundResult {
    pub gamma: f64,
    pub tau: f64,
    pub lower: EstimateResult,
    pub upper: EstimateResult,
}

impl GammaBoundResult {
    /// Lower confidence limit of the lower endpoint to the upper limit of
    /// the upper endpoint.
    pub fn union_ci(&self) -> (f64, f64) {
        (self.lower.ci_low, self.upper.ci_high)
    }
}

pub fn endpoint_one_step(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    gamma: f64,
    estimand: Estimand,
    alpha: f64,
) -> Result<GammaBoundResult> {
    check_gamma(gamma)?;
    require_smooth(spec)?;
    fit.check_against(data)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidData(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(GammaBoundResult {
        gamma,
        tau: spec.tau(),
        lower: side_estimate(data, fit, spec, gamma, estimand, Side::Lower, alpha),
        upper: side_estimate(data, fit, spec, gamma, estimand, Side::Upper, alpha),
    })
}

/// Endpoint estimates over a Gamma grid, in grid order.
pub fn gamma_table(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    gammas: &[f64],
    estimand: Estimand,
    alpha: f64,
) -> Result<Vec<GammaBoundResult>> {
    gammas.par_iter().map(|&g| endpoint_one_step(data, fit, spec, g, estimand, alpha)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakevenStatus {
    Found,
    /// The Gamma = 1 interval already contains the null value.
    NotIdentifiedAtOne,
    /// The interval still excludes the null value at the search limit.
    ExceedsMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Breakeven {
    pub gamma: f64,
    pub tau: f64,
    pub status: BreakevenStatus,
}

/// Largest Gamma in `[1, gamma_max]` whose union interval excludes
/// `null_value`, by bisection to `tol`. Assumes the interval widens with Gamma.
#[allow(clippy::too_many_arguments)]
pub fn breakeven_gamma(
    data: &Dataset,
    fit: &NuisanceFit,
    spec: &CopulaSpec,
    estimand: Estimand,
    null_value: f64,
    gamma_max: f64,
    tol: f64,
    alpha: f64,
) -> Result<Breakeven> {
    check_gamma(gamma_max)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidData(format!("breakeven tolerance must be positive, got {tol}")));
    }
    let excludes = |g: f64| -> Result<bool> {
        let (lo, hi) = endpoint_one_step(data, fit, spec, g, estimand, alpha)?.union_ci();
        Ok(null_value < lo || null_value > hi)
    };
    let tau = spec.tau();
    if !excludes(1.0)? {
        return Ok(Breakeven { gamma: 1.0, tau, status: BreakevenStatus::NotIdentifiedAtOne });
    }
    if excludes(gamma_max)? {
        return Ok(Breakeven { gamma: gamma_max, tau, status: BreakevenStatus::ExceedsMax });
    }
    let (mut lo, mut hi) = (1.0, gamma_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if excludes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Breakeven { gamma: lo, tau, status: BreakevenStatus::Found })
}

/// Curve-level robustness: the smallest breakeven Gamma across a tau grid.
#[allow(clippy::too_many_arguments)]
pub fn breakeven_over_taus(
    data: &Dataset,
    fit: &NuisanceFit,
    family: Family,
    taus: &[f64],
    estimand: Estimand,
    null_value: f64,
    gamma_max: f64,
    tol: f64,
    alpha: f64,
) -> Result<Breakeven> {
    let per: Vec<Breakeven> = taus
        .par_iter()
        .map(|&t| {
            let spec = CopulaSpec::from_tau(family, t)?;
            breakeven_gamma(data, fit, &spec, estimand, null_value, gamma_max, tol, alpha).map(|b| Breakeven { tau: t, ..b })
        })
        .collect::<Result<_>>()?;
    per.into_iter()
        .min_by(|a, b| a.gamma.total_cmp(&b.gamma))
        .ok_or_else(|| Error::InvalidData("empty tau grid".into()))
}

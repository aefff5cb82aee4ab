//! Latent-threshold data-generating processes.
//!
//! `Y(a) <= k` iff `eta_a(X) + logit(U_a) <= lambda_k`, so each arm follows a
//! proportional-odds model and `(U_1, U_0) | X` carries the copula.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::copula::{CopulaSpec, Family};
use crate::error::{Error, Result};
use crate::estimands::{m_from_margins, Estimand};
use crate::nuisance::{Dataset, RawNuisance};
use crate::numeric::{expit, gauss_legendre, logit, CompensatedSum};

/// Map applied to each covariate before the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    Linear,
    /// `(x + 0.5)^2 / 2`
    ShiftedSquare,
    /// `x^2 / 2`
    HalfSquare,
}

impl Features {
    fn apply(self, x: f64) -> f64 {
        match self {
            Features::Linear => x,
            Features::ShiftedSquare => 0.5 * (x + 0.5) * (x + 0.5),
            Features::HalfSquare => 0.5 * x * x,
        }
    }
}

/// Covariate-dependent Kendall's tau of the latent copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TauFn {
    /// `expit(slope * x_1)`
    Expit { slope: f64 },
    /// `base + slope * (sum_j |x_j| - 1.5)`
    AbsSum { base: f64, slope: f64 },
}

impl TauFn {
    fn eval(self, x: &[f64]) -> f64 {
        match self {
            TauFn::Expit { slope } => expit(slope * x[0]),
            TauFn::AbsSum { base, slope } => base + slope * (x.iter().map(|v| v.abs()).sum::<f64>() - 1.5),
        }
    }

    // attainable range for covariates in [-1, 1]^p
    fn range(self, p: usize) -> (f64, f64) {
        match self {
            TauFn::Expit { slope } => (expit(-slope.abs()), expit(slope.abs())),
            TauFn::AbsSum { base, slope } => {
                let (a, b) = (base - 1.5 * slope, base + slope * (p as f64 - 1.5));
                (a.min(b), a.max(b))
            }
        }
    }
}

/// How the pair of potential outcomes is coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    /// The copula (or `tau_fn`) couples the latent errors given X.
    Latent,
    /// The copula couples the unconditional margins exactly; the conditional
    /// joint law is `p_1(x) p_0(x)' + D` with a constant correction `D`.
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpSpec {
    pub n: usize,
    /// Number of iid Unif(-1, 1) covariates.
    pub covariates: usize,
    /// Propensity intercept then slopes.
    pub beta1: Vec<f64>,
    pub propensity_features: Features,
    /// Outcome intercept then slopes.
    pub beta2: Vec<f64>,
    pub outcome_features: Features,
    pub delta: f64,
    /// `lambda_0 < ... < lambda_{L-2}`.
    pub thresholds: Vec<f64>,
    pub copula: CopulaSpec,
    pub tau_fn: Option<TauFn>,
    pub joint: Joint,
    /// Odds-ratio bound of a hidden binary confounder `U = 1{U_1 > 1/2}`
    /// entering the treatment model as `log(gamma) U`.
    pub hidden_gamma: Option<f64>,
}

/// `logit((k + 1) / L)` for k = 0..L-2.
pub fn even_thresholds(levels: usize) -> Vec<f64> {
    (0..levels - 1).map(|k| logit((k + 1) as f64 / levels as f64)).collect()
}

impl DgpSpec {
    /// Three covariates, `logit e = 0.5 - 0.2 x1 + 0.2 x2 - 0.2 x3`,
    /// `eta_a = 0.6 + 0.15 (x1 + x2 + x3) + 0.4 a`, five levels, Gumbel
    /// latent errors with rho = 2.
    pub fn baseline(n: usize) -> Self {
        DgpSpec {
            n,
            covariates: 3,
            beta1: vec![0.5, -0.2, 0.2, -0.2],
            propensity_features: Features::Linear,
            beta2: vec![0.6, 0.15, 0.15, 0.15],
            outcome_features: Features::Linear,
            delta: 0.4,
            thresholds: even_thresholds(5),
            copula: CopulaSpec::new(Family::Gumbel, 2.0).expect("valid"),
            tau_fn: None,
            joint: Joint::Latent,
            hidden_gamma: None,
        }
    }

    /// Propensity linear in `(x + 0.5)^2 / 2` with slopes scaled by 1.2 / 0.2.
    pub fn misspecified_propensity(n: usize) -> Self {
        DgpSpec { beta1: vec![0.5, -1.2, 1.2, -1.2], propensity_features: Features::ShiftedSquare, ..Self::baseline(n) }
    }

    /// Propensity slopes tripled to weaken overlap.
    pub fn moderate_overlap(n: usize) -> Self {
        DgpSpec { beta1: vec![0.5, -0.6, 0.6, -0.6], ..Self::baseline(n) }
    }

    /// Gumbel latent copula with `tau(x) = expit(s x1)`.
    pub fn heterogeneous_tau(n: usize, s: f64) -> Self {
        DgpSpec { tau_fn: Some(TauFn::Expit { slope: s }), ..Self::baseline(n) }
    }

    /// Outcome slopes 0.45.
    pub fn strong_prognostic(n: usize) -> Self {
        DgpSpec { beta2: vec![0.6, 0.45, 0.45, 0.45], ..Self::baseline(n) }
    }

    /// Exactly unconditional Gumbel copula, `eta_a = 0.2 + 0.13 (x1 + x2 + x3) + 0.4 a`.
    pub fn unconditional(n: usize) -> Self {
        DgpSpec { beta2: vec![0.2, 0.13, 0.13, 0.13], joint: Joint::Unconditional, ..Self::baseline(n) }
    }

    /// Baseline with a hidden confounder of odds-ratio bound `gamma`.
    pub fn hidden_confounding(n: usize, gamma: f64) -> Self {
        DgpSpec { hidden_gamma: Some(gamma), ..Self::baseline(n) }
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidData(m));
        if self.n < 2 {
            return bad(format!("sample size {} is below 2", self.n));
        }
        if self.covariates == 0 {
            return bad("at least one covariate is required".into());
        }
        if self.beta1.len() != self.covariates + 1 || self.beta2.len() != self.covariates + 1 {
            return bad(format!("beta1 and beta2 need {} entries (intercept and slopes)", self.covariates + 1));
        }
        if self.thresholds.is_empty() || !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return bad("thresholds must be nonempty and strictly increasing".into());
        }
        if let Some(g) = self.hidden_gamma {
            if !(g >= 1.0 && g.is_finite()) {
                return Err(Error::InvalidGamma(g));
            }
        }
        if let Some(t) = self.tau_fn {
            if self.joint == Joint::Unconditional {
                return bad("covariate-dependent tau needs the latent coupling".into());
            }
            let (lo, hi) = t.range(self.covariates);
            for tau in [lo, hi] {
                CopulaSpec::from_tau(self.copula.family(), tau)?;
            }
        }
        Ok(())
    }

    fn linear(coef: &[f64], features: Features, x: &[f64]) -> f64 {
        coef[0] + x.iter().zip(&coef[1..]).map(|(&v, b)| b * features.apply(v)).sum::<f64>()
    }

    pub fn eta(&self, x: &[f64], arm: u8) -> f64 {
        Self::linear(&self.beta2, self.outcome_features, x) + self.delta * arm as f64
    }

    /// Propensity given X alone (the hidden confounder averaged out).
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let lin = Self::linear(&self.beta1, self.propensity_features, x);
        match self.hidden_gamma {
            Some(g) => 0.5 * (expit(lin) + expit(lin + g.ln())),
            None => expit(lin),
        }
    }

    /// `F_a(k | x)` for k = 0..L-2.
    pub fn margins(&self, x: &[f64], arm: u8) -> Vec<f64> {
        let eta = self.eta(x, arm);
        self.thresholds.iter().map(|&l| expit(l - eta)).collect()
    }

    /// Copula of the latent errors at `x`.
    pub fn copula_at(&self, x: &[f64]) -> CopulaSpec {
        match self.tau_fn {
            Some(t) => CopulaSpec::from_tau(self.copula.family(), t.eval(x)).expect("validated tau range"),
            None => self.copula,
        }
    }
}

/// Draw `v` from `C(. | u)` by inverting the partial derivative in `u`.
pub fn sample_conditional(spec: &CopulaSpec, u: f64, w: f64) -> f64 {
    match spec.family() {
        Family::Independence => return w,
        Family::FrechetUpper => return u,
        Family::FrechetLower => return 1.0 - u,
        _ => {}
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if spec.partial_u(u, mid) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn level(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|&c| u <= c).unwrap_or(cum.len())
}

/// One generated sample with both potential outcomes kept.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: Dataset,
    pub y1: Vec<usize>,
    pub y0: Vec<usize>,
    /// Hidden confounder, when the DGP has one.
    pub hidden: Option<Vec<u8>>,
}

/// Constant correction `D = Pi - E{p_1(X) p_0(X)'}` of the unconditional
/// construction, row index Y(1).
fn unconditional_correction(spec: &DgpSpec) -> Result<Vec<f64>> {
    let l = spec.levels();
    let q = Quadrature::new(spec.covariates)?;
    let mut e_outer = vec![0.0; l * l];
    let mut f1 = vec![0.0; l - 1];
    let mut f0 = vec![0.0; l - 1];
    for (x, w) in q.nodes() {
        let (m1, m0) = (spec.margins(&x, 1), spec.margins(&x, 0));
        let (p1, p0) = (pmf(&m1), pmf(&m0));
        for k in 0..l {
            for j in 0..l {
                e_outer[k * l + j] += w * p1[k] * p0[j];
            }
        }
        for k in 0..l - 1 {
            f1[k] += w * m1[k];
            f0[k] += w * m0[k];
        }
    }
    let grid = crate::estimands::cell_grid(&f1, &f0, &spec.copula)?;
    let mut d = vec![0.0; l * l];
    for k in 0..l {
        for j in 0..l {
            d[k * l + j] = grid.pi(k, j) - e_outer[k * l + j];
        }
    }
    Ok(d)
}

fn pmf(cum: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cum.len() + 1);
    let mut prev = 0.0;
    for &c in cum.iter().chain(std::iter::once(&1.0)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

pub fn generate(spec: &DgpSpec, seed: u64) -> Result<SimulatedData> {
    generate_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_with(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<SimulatedData> {
    spec.validate()?;
    let (n, p, l) = (spec.n, spec.covariates, spec.levels());
    let sampler = UnitSampler::new(spec)?;
    let mut x = DMatrix::zeros(n, p);
    let (mut y, mut a, mut y1s, mut y0s) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut hidden = spec.hidden_gamma.map(|_| Vec::with_capacity(n));
    let mut row = vec![0.0; p];
    for i in 0..n {
        let unit = sampler.draw(rng, &mut row)?;
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
        if let Some(h) = hidden.as_mut() {
            h.push(unit.hidden);
        }
        y.push(if unit.a == 1 { unit.y1 } else { unit.y0 });
        a.push(unit.a);
        y1s.push(unit.y1);
        y0s.push(unit.y0);
    }
    let data = Dataset::new(y, a, x, l)?;
    Ok(SimulatedData { data, y1: y1s, y0: y0s, hidden })
}

struct Unit {
    y1: usize,
    y0: usize,
    a: u8,
    hidden: u8,
}

struct UnitSampler<'a> {
    spec: &'a DgpSpec,
    correction: Option<Vec<f64>>,
}

impl<'a> UnitSampler<'a> {
    fn new(spec: &'a DgpSpec) -> Result<Self> {
        let correction = match spec.joint {
            Joint::Unconditional => Some(unconditional_correction(spec)?),
            Joint::Latent => None,
        };
        Ok(Self { spec, correction })
    }

    /// Draws covariates into `row`, then the outcome pair and treatment.
    fn draw(&self, rng: &mut ChaCha8Rng, row: &mut [f64]) -> Result<Unit> {
        let spec = self.spec;
        let l = spec.levels();
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (m1, m0) = (spec.margins(row, 1), spec.margins(row, 0));
        let (y1, y0, u1) = match &self.correction {
            None => {
                let cop = spec.copula_at(row);
                let u1: f64 = rng.random();
                let u0 = sample_conditional(&cop, u1, rng.random());
                (level(&m1, u1), level(&m0, u0), u1)
            }
            Some(d) => {
                let (p1, p0) = (pmf(&m1), pmf(&m0));
                let target: f64 = rng.random();
                let mut acc = 0.0;
                let mut cell = l * l - 1;
                for c in 0..l * l {
                    let pi = p1[c / l] * p0[c % l] + d[c];
                    if pi < -1e-12 {
                        return Err(Error::Numeric(format!(
                            "unconditional construction gives a negative cell probability {pi:e}"
                        )));
                    }
                    acc += pi.max(0.0);
                    if target < acc {
                        cell = c;
                        break;
                    }
                }
                // the hidden confounder is tied to the latent coupling only
                (cell / l, cell % l, 0.0)
            }
        };
        let lin = DgpSpec::linear(&spec.beta1, spec.propensity_features, row);
        let hidden = (u1 > 0.5) as u8;
        let e = match spec.hidden_gamma {
            Some(g) => expit(lin + g.ln() * hidden as f64),
            None => expit(lin),
        };
        let a = rng.random_bool(e) as u8;
        Ok(Unit { y1, y0, a, hidden })
    }
}

/// Propensity and margins of the DGP evaluated at the sample's covariates.
/// Not available under hidden confounding, where the observed margins differ
/// from the causal ones.
pub fn true_nuisance(spec: &DgpSpec, x: &DMatrix<f64>) -> Result<RawNuisance> {
    if spec.hidden_gamma.is_some() {
        return Err(Error::InvalidData("true observed-data nuisances are not tabulated under hidden confounding".into()));
    }
    let mut out = RawNuisance { e: Vec::with_capacity(x.nrows()), f1: Vec::new(), f0: Vec::new() };
    for i in 0..x.nrows() {
        let row: Vec<f64> = (0..x.ncols()).map(|j| x[(i, j)]).collect();
        out.e.push(spec.propensity(&row));
        out.f1.extend(spec.margins(&row, 1));
        out.f0.extend(spec.margins(&row, 0));
    }
    Ok(out)
}

/// Tensor Gauss-Legendre rule on [-1, 1]^p for the uniform density, two
/// panels per axis so kinks at 0 fall on a panel edge.
struct Quadrature {
    p: usize,
    axis: Vec<(f64, f64)>,
}

const NODES_PER_PANEL: usize = 8;

impl Quadrature {
    fn new(p: usize) -> Result<Self> {
        if p > 4 {
            return Err(Error::InvalidData(format!("quadrature truth supports at most 4 covariates, got {p}")));
        }
        let rule = gauss_legendre(NODES_PER_PANEL);
        let mut axis = Vec::with_capacity(2 * NODES_PER_PANEL);
        for (lo, hi) in [(-1.0, 0.0), (0.0, 1.0)] {
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for &(t, w) in &rule {
                // density 1/2 on [-1, 1]
                axis.push((mid + half * t, 0.5 * half * w));
            }
        }
        Ok(Self { p, axis })
    }

    fn nodes(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let m = self.axis.len();
        (0..m.pow(self.p as u32)).map(move |mut idx| {
            let mut x = Vec::with_capacity(self.p);
            let mut w = 1.0;
            for _ in 0..self.p {
                let (t, wt) = self.axis[idx % m];
                x.push(t);
                w *= wt;
                idx /= m;
            }
            (x, w)
        })
    }
}

/// Population value of an estimand by quadrature over X.
///
/// With `copula = None` this is the DGP's own target. With `Some(c)` it is
/// the functional the analysis copula `c` identifies from the true margins:
/// `E{m(X; c)}` under the latent coupling, `m(F_1, F_0; c)` on the
/// unconditional margins otherwise.
pub fn population_value(spec: &DgpSpec, estimand: Estimand, copula: Option<&CopulaSpec>) -> Result<f64> {
    spec.validate()?;
    let q = Quadrature::new(spec.covariates)?;
    match spec.joint {
        Joint::Latent => {
            let mut acc = CompensatedSum::default();
            for (x, w) in q.nodes() {
                let c = copula.copied().unwrap_or_else(|| spec.copula_at(&x));
                acc.add(w * m_from_margins(estimand, &spec.margins(&x, 1), &spec.margins(&x, 0), &c));
            }
            Ok(acc.value())
        }
        Joint::Unconditional => {
            let m = spec.levels() - 1;
            let (mut f1, mut f0) = (vec![0.0; m], vec![0.0; m]);
            for (x, w) in q.nodes() {
                for (k, v) in spec.margins(&x, 1).into_iter().enumerate() {
                    f1[k] += w * v;
                }
                for (k, v) in spec.margins(&x, 0).into_iter().enumerate() {
                    f0[k] += w * v;
                }
            }
            Ok(m_from_margins(estimand, &f1, &f0, copula.unwrap_or(&spec.copula)))
        }
    }
}

/// Monte Carlo truths with standard errors, indexed like `Estimand::ALL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truth {
    pub values: [f64; 3],
    pub se: [f64; 3],
    pub draws: usize,
}

impl Truth {
    fn index(e: Estimand) -> usize {
        match e {
            Estimand::Psi => 0,
            Estimand::Phi => 1,
            Estimand::Xi => 2,
        }
    }

    pub fn get(&self, e: Estimand) -> f64 {
        self.values[Self::index(e)]
    }

    pub fn se_of(&self, e: Estimand) -> f64 {
        self.se[Self::index(e)]
    }

    /// Exact values with zero standard error.
    pub fn exact(psi: f64, phi: f64) -> Self {
        Truth { values: [psi, phi, psi + phi - 1.0], se: [0.0; 3], draws: 0 }
    }

    pub fn from_quadrature(spec: &DgpSpec) -> Result<Self> {
        Ok(Self::exact(population_value(spec, Estimand::Psi, None)?, population_value(spec, Estimand::Phi, None)?))
    }
}

const TRUTH_CHUNK: usize = 10_000;

/// Frequencies of `{Y(1) > Y(0)}` and `{Y(1) >= Y(0)}` over `draws` coupled
/// latent draws. Chunks use separate RNG streams, so the result does not
/// depend on the thread count.
pub fn truth(spec: &DgpSpec, draws: usize, seed: u64) -> Result<Truth> {
    spec.validate()?;
    if draws < 2 {
        return Err(Error::InvalidData("truth needs at least two draws".into()));
    }
    let sampler = UnitSampler::new(spec)?;
    let chunks = draws.div_ceil(TRUTH_CHUNK);
    let counts: Vec<(usize, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let size = TRUTH_CHUNK.min(draws - c * TRUTH_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut row = vec![0.0; spec.covariates];
            let (mut gt, mut ge) = (0, 0);
            for _ in 0..size {
                let u = sampler.draw(&mut rng, &mut row)?;
                gt += (u.y1 > u.y0) as usize;
                ge += (u.y1 >= u.y0) as usize;
            }
            Ok((gt, ge))
        })
        .collect::<Result<_>>()?;
    let gt: usize = counts.iter().map(|c| c.0).sum();
    let ge: usize = counts.iter().map(|c| c.1).sum();
    let nf = draws as f64;
    let (psi, phi) = (gt as f64 / nf, ge as f64 / nf);
    let xi = psi + phi - 1.0;
    // the xi indicator 1{>} - 1{<} has second moment psi + 1 - phi
    let se = |second: f64, mean: f64| ((second - mean * mean).max(0.0) / (nf - 1.0)).sqrt();
    Ok(Truth { values: [psi, phi, xi], se: [se(psi, psi), se(phi, phi), se(psi + 1.0 - phi, xi)], draws })
}

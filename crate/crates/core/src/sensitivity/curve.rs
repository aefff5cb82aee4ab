use rayon::prelude::*;
use serde::Serialize;

use crate::copula::{CopulaSpec, Family};
use crate::error::{Error, Result};
use crate::estimands::{dr_unconditional_margins, estimate, frechet_envelope, unit_bounds, Estimand, EstimateResult, Mode};
use crate::nuisance::{Dataset, NuisanceFit};

/// Kendall's tau values for one family, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauGrid {
    family: Family,
    taus: Vec<f64>,
}

impl TauGrid {
    pub fn new(family: Family, taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::InvalidData("tau grid is empty".into()));
        }
        if let Some(i) = taus.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidData(format!(
                "tau grid must be strictly increasing ({} then {})",
                taus[i],
                taus[i + 1]
            )));
        }
        for &t in &taus {
            CopulaSpec::from_tau(family, t)?;
        }
        Ok(Self { family, taus })
    }

    /// 0, 0.1, ..., 0.9.
    pub fn standard(family: Family) -> Result<Self> {
        Self::new(family, (0..10).map(|i| i as f64 / 10.0).collect())
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn specs(&self) -> Vec<CopulaSpec> {
        self.taus.iter().map(|&t| CopulaSpec::from_tau(self.family, t).expect("validated grid")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityCurve {
    pub grid: TauGrid,
    pub estimates: Vec<EstimateResult>,
    /// Range of the estimand over all couplings of the fitted margins.
    pub envelope: (f64, f64),
}

impl SensitivityCurve {
    /// Grid indices whose point estimate leaves the envelope by more than `slack`.
    pub fn envelope_violations(&self, slack: f64) -> Vec<usize> {
        let (lo, hi) = self.envelope;
        self.estimates
            .iter()
            .enumerate()
            .filter(|(_, e)| e.point < lo - slack || e.point > hi + slack)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Estimates along a tau grid with one shared set of nuisances.
pub fn tau_curve(
    data: &Dataset,
    fit: &NuisanceFit,
    grid: &TauGrid,
    estimand: Estimand,
    alpha: f64,
    mode: Mode,
) -> Result<SensitivityCurve> {
    let estimates = grid
        .specs()
        .par_iter()
        .map(|spec| estimate(data, fit, spec, estimand, alpha, mode))
        .collect::<Result<Vec<_>>>()?;
    let envelope = match mode {
        Mode::UnconditionalDr => {
            let (f1, f0) = dr_unconditional_margins(data, fit)?;
            unit_bounds(estimand, &f1, &f0)
        }
        Mode::OneStep | Mode::CrossFit => frechet_envelope(fit, estimand),
    };
    Ok(SensitivityCurve { grid: grid.clone(), estimates, envelope })
}

//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{expit, logit};

const MODEL: &str = "propensity (logistic)";
const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;
const SEPARATION_ETA: f64 = 30.0;

/// Fitted `logit P(A=1|x) = b0 + x'b`.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept first, then one slope per covariate.
    pub coef: DVector<f64>,
    /// Inverse observed information; standard errors are the root diagonal.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut eta = self.coef[0];
        for j in 0..x.ncols() {
            eta += self.coef[j + 1] * x[(i, j)];
        }
        eta
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| expit(self.linear_predictor(x, i))).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    d.columns_mut(1, x.ncols()).copy_from(x);
    d
}

/// `D' diag(w) D`.
pub(crate) fn weighted_gram(design: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut wd = design.clone();
    for (i, mut row) in wd.row_iter_mut().enumerate() {
        row *= w[i];
    }
    design.tr_mul(&wd)
}

/// Reject designs whose Gram matrix is numerically rank deficient.
pub(crate) fn check_rank(design: &DMatrix<f64>, model: &'static str) -> Result<()> {
    let gram = design.transpose() * design;
    let ev = gram.symmetric_eigenvalues();
    let max = ev.max();
    let min = ev.min();
    if !(max > 0.0) || min <= max * 1e-13 {
        return Err(Error::SingularDesign { model });
    }
    Ok(())
}

/// Maximum-likelihood logistic regression of binary `t` on `x` plus intercept.
pub fn fit_logistic(x: &DMatrix<f64>, t: &[u8]) -> Result<LogisticFit> {
    let n = x.nrows();
    let design = with_intercept(x);
    check_rank(&design, MODEL)?;
    let q = design.ncols();
    let mean = t.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    if mean == 0.0 || mean == 1.0 {
        return Err(Error::SeparationDetected { model: MODEL, max_eta: f64::INFINITY });
    }
    let mut beta = DVector::zeros(q);
    beta[0] = logit(mean);
    let target = DVector::from_iterator(n, t.iter().map(|&v| v as f64));

    for iter in 1..=MAX_ITER {
        let eta = &design * &beta;
        let mu = eta.map(expit);
        let info = weighted_gram(&design, &mu.map(|m| m * (1.0 - m)));
        let score = design.transpose() * (&target - &mu);
        let chol = info.cholesky().ok_or(Error::SingularDesign { model: MODEL })?;
        let step = chol.solve(&score);
        beta += &step;
        let max_eta = (&design * &beta).amax();
        if max_eta > SEPARATION_ETA {
            return Err(Error::SeparationDetected { model: MODEL, max_eta });
        }
        if step.amax() < TOL {
            let w = (&design * &beta).map(|e| {
                let m = expit(e);
                m * (1.0 - m)
            });
            let cov = weighted_gram(&design, &w)
                .cholesky()
                .ok_or(Error::SingularDesign { model: MODEL })?
                .inverse();
            return Ok(LogisticFit { coef: beta, cov, iterations: iter });
        }
    }
    Err(Error::NonConvergence { model: MODEL, iterations: MAX_ITER })
}

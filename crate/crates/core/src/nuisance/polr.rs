//! Proportional-odds (cumulative logit) regression,
//! `logit F(k|x) = lambda_k - x'beta`, fitted by Newton's method.
//!
//! Cutpoints are optimized as `lambda_k = lambda_0 + sum_{j<=k} exp(g_j)` so
//! every iterate keeps them strictly increasing.

use nalgebra::{DMatrix, DVector};

use super::logistic::{check_rank, with_intercept};
use crate::error::{Error, Result};
use crate::numeric::{expit, logit};

const MODEL: &str = "outcome (proportional odds)";
const MAX_ITER: usize = 200;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PropOddsFit {
    pub cutpoints: Vec<f64>,
    pub beta: DVector<f64>,
    /// Inverse observed information over (cutpoints, beta).
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

impl PropOddsFit {
    /// Cumulative probabilities `F(k|eta)` for k = 0..L-2.
    pub fn cdf_row(&self, eta: f64) -> Vec<f64> {
        self.cutpoints.iter().map(|&l| expit(l - eta)).collect()
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        (0..x.ncols()).map(|j| self.beta[j] * x[(i, j)]).sum()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

/// Per-observation log-likelihood pieces for `y = k`.
struct Piece {
    logp: f64,
    // derivative wrt the upper (a = lambda_k - eta) and lower (b = lambda_{k-1} - eta) arguments
    da: f64,
    db: f64,
    haa: f64,
    hbb: f64,
    hab: f64,
}

fn piece(k: usize, m: usize, lambda: &[f64], eta: f64) -> Piece {
    let (fu, fpu, upper) = if k < m {
        let f = expit(lambda[k] - eta);
        (f, f * (1.0 - f), Some(lambda[k] - eta))
    } else {
        (1.0, 0.0, None)
    };
    let (fl, fpl, lower) = if k > 0 {
        let f = expit(lambda[k - 1] - eta);
        (f, f * (1.0 - f), Some(lambda[k - 1] - eta))
    } else {
        (0.0, 0.0, None)
    };
    // upper tail mass is computed through complements to avoid cancellation
    let p = match (upper, lower) {
        (Some(a), Some(b)) if b > 0.0 => expit(-b) - expit(-a),
        _ => fu - fl,
    };
    let da = fpu / p;
    let db = -fpl / p;
    let haa = fpu * (1.0 - 2.0 * fu) / p - da * da;
    let hbb = -fpl * (1.0 - 2.0 * fl) / p - db * db;
    Piece { logp: p.ln(), da, db, haa, hbb, hab: -da * db }
}

fn loglik(x: &DMatrix<f64>, y: &[usize], lambda: &[f64], beta: &[f64]) -> f64 {
    let m = lambda.len();
    let mut s = 0.0;
    for (i, &k) in y.iter().enumerate() {
        let eta: f64 = (0..beta.len()).map(|j| beta[j] * x[(i, j)]).sum();
        s += piece(k, m, lambda, eta).logp;
    }
    s
}

/// Gradient and Hessian over (lambda_0..lambda_{m-1}, beta).
fn derivatives(x: &DMatrix<f64>, y: &[usize], lambda: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = lambda.len();
    let q = beta.len();
    let d = m + q;
    let mut grad = vec![0.0; d];
    let mut hess = DMatrix::zeros(d, d);
    let mut va = vec![0.0; d];
    let mut vb = vec![0.0; d];
    for (i, &k) in y.iter().enumerate() {
        let eta: f64 = (0..q).map(|j| beta[j] * x[(i, j)]).sum();
        let pc = piece(k, m, lambda, eta);
        va.iter_mut().for_each(|v| *v = 0.0);
        vb.iter_mut().for_each(|v| *v = 0.0);
        if k < m {
            va[k] = 1.0;
        }
        if k > 0 {
            vb[k - 1] = 1.0;
        }
        for j in 0..q {
            va[m + j] = -x[(i, j)];
            vb[m + j] = -x[(i, j)];
        }
        for r in 0..d {
            grad[r] += pc.da * va[r] + pc.db * vb[r];
            for c in 0..=r {
                let h = pc.haa * va[r] * va[c] + pc.hbb * vb[r] * vb[c] + pc.hab * (va[r] * vb[c] + vb[r] * va[c]);
                hess[(r, c)] += h;
            }
        }
    }
    hess.fill_upper_triangle_with_lower_triangle();
    (grad, hess)
}

fn cutpoints(theta: &[f64], m: usize) -> Vec<f64> {
    let mut lam = Vec::with_capacity(m);
    lam.push(theta[0]);
    for j in 1..m {
        lam.push(lam[j - 1] + theta[j].exp());
    }
    lam
}

/// Fit on covariates `x` (no intercept column) and outcomes in `0..levels`.
/// Every level must be present.
pub fn fit_prop_odds(x: &DMatrix<f64>, y: &[usize], levels: usize) -> Result<PropOddsFit> {
    let n = y.len();
    let m = levels - 1;
    let q = x.ncols();
    let mut counts = vec![0usize; levels];
    for &v in y {
        counts[v] += 1;
    }
    if let Some(level) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyLevel { level, context: String::new() });
    }
    if q > 0 {
        check_rank(&with_intercept(x), MODEL)?;
    }

    let mut cum = 0usize;
    let mut theta = vec![0.0; m + q];
    let mut prev = 0.0;
    for k in 0..m {
        cum += counts[k];
        let l = logit(cum as f64 / n as f64);
        theta[k] = if k == 0 { l } else { (l - prev).ln() };
        prev = l;
    }

    let mut ll = loglik(x, y, &cutpoints(&theta, m), &theta[m..]);
    for iter in 1..=MAX_ITER {
        let lam = cutpoints(&theta, m);
        let (g_nat, h_nat) = derivatives(x, y, &lam, &theta[m..]);
        let d = m + q;
        let mut jac = DMatrix::<f64>::identity(d, d);
        for k in 0..m {
            jac[(k, 0)] = 1.0;
            for j in 1..=k {
                jac[(k, j)] = theta[j].exp();
            }
        }
        let grad = jac.transpose() * DVector::from_vec(g_nat.clone());
        let gn = jac.transpose() * &h_nat * &jac;
        let mut full = gn.clone();
        for j in 1..m {
            let tail: f64 = (j..m).map(|k| g_nat[k]).sum();
            full[(j, j)] += tail * theta[j].exp();
        }
        let step = match (-full).cholesky() {
            Some(ch) => ch.solve(&grad),
            None => (-gn).cholesky().ok_or(Error::SingularDesign { model: MODEL })?.solve(&grad),
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let cand_ll = loglik(x, y, &cutpoints(&cand, m), &cand[m..]);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, cand_ll)) = accepted else {
            return Err(Error::NonConvergence { model: MODEL, iterations: iter });
        };
        let moved = step.amax() * scale;
        theta = cand;
        ll = cand_ll;
        if moved < TOL {
            let lam = cutpoints(&theta, m);
            let (_, h) = derivatives(x, y, &lam, &theta[m..]);
            let cov = (-h).cholesky().ok_or(Error::SingularDesign { model: MODEL })?.inverse();
            return Ok(PropOddsFit {
                cutpoints: lam,
                beta: DVector::from_column_slice(&theta[m..]),
                cov,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence { model: MODEL, iterations: MAX_ITER })
}

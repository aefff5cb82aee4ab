//! Range of each estimand over every coupling of the identified margins.
//!
//! For two levels this equals the values under the Frechet copulas W and M.
//! With more levels W and M are no longer the extremal couplings, so the
//! per-unit bounds are the discrete Makarov bounds, which are attained.
//! The difference estimand has no product form, so its range is the optimum
//! of the transport problem over couplings of the two level distributions.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{margin, Estimand};
use crate::nuisance::NuisanceFit;
use crate::numeric::CompensatedSum;

/// Bounds on pr{S > T} over couplings of S ~ fs and T ~ ft (cumulative rows).
fn strict_excess_bounds(fs: &[f64], ft: &[f64]) -> (f64, f64) {
    let l = fs.len() as isize + 1;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for k in 0..l {
        // {T <= k-1} lies in {S > T} union {S <= k-1}
        lo = lo.max(margin(ft, k - 1) - margin(fs, k - 1));
        // {S <= k} lies in {S <= T} union {T <= k-1}
        hi = hi.min(1.0 + margin(ft, k - 1) - margin(fs, k));
    }
    (lo, hi)
}

/// Sharp bounds for one unit's conditional estimand.
pub fn unit_bounds(estimand: Estimand, f1_row: &[f64], f0_row: &[f64]) -> (f64, f64) {
    let psi = strict_excess_bounds(f1_row, f0_row);
    let rev = strict_excess_bounds(f0_row, f1_row);
    let phi = (1.0 - rev.1, 1.0 - rev.0);
    match estimand {
        Estimand::Psi => psi,
        Estimand::Phi => phi,
        Estimand::Xi => xi_bounds(f1_row, f0_row).unwrap_or((psi.0 + phi.0 - 1.0, psi.1 + phi.1 - 1.0)),
    }
}

fn pmf(row: &[f64]) -> Vec<f64> {
    (0..=row.len() as isize).map(|k| (margin(row, k) - margin(row, k - 1)).max(0.0)).collect()
}

/// Extremes of pr{Y(1) > Y(0)} - pr{Y(1) < Y(0)} over couplings; None if the
/// solver fails, in which case callers fall back to the summed ranges.
fn xi_bounds(f1_row: &[f64], f0_row: &[f64]) -> Option<(f64, f64)> {
    let (p1, p0) = (pmf(f1_row), pmf(f0_row));
    let l = p1.len();
    let solve = |dir| -> Option<f64> {
        let mut pb = Problem::new(dir);
        let vars: Vec<_> = (0..l * l)
            .map(|v| {
                let (k, j) = (v / l, v % l);
                let c = if k > j { 1.0 } else if k < j { -1.0 } else { 0.0 };
                pb.add_var(c, (0.0, f64::INFINITY))
            })
            .collect();
        for k in 0..l {
            let row: Vec<_> = (0..l).map(|j| (vars[k * l + j], 1.0)).collect();
            pb.add_constraint(&row, ComparisonOp::Eq, p1[k]);
        }
        // the last column sum is implied
        for j in 0..l - 1 {
            let col: Vec<_> = (0..l).map(|k| (vars[k * l + j], 1.0)).collect();
            pb.add_constraint(&col, ComparisonOp::Eq, p0[j]);
        }
        pb.solve().ok().map(|s| s.objective())
    };
    let lo = solve(OptimizationDirection::Minimize)?;
    let hi = solve(OptimizationDirection::Maximize)?;
    Some((lo.max(-1.0), hi.min(1.0)))
}

/// Plug-in average of the per-unit bounds.
pub fn frechet_envelope(fit: &NuisanceFit, estimand: Estimand) -> (f64, f64) {
    let mut lo = CompensatedSum::default();
    let mut hi = CompensatedSum::default();
    for i in 0..fit.n() {
        let (l, h) = unit_bounds(estimand, fit.f1_row(i), fit.f0_row(i));
        lo.add(l);
        hi.add(h);
    }
    let n = fit.n() as f64;
    (lo.value() / n, hi.value() / n)
}

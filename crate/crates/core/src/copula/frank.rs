//! Frank copula. Negative parameters use the reflection
//! C_{-t}(u, v) = u - C_t(u, 1 - v), so the core formulas only ever see t > 0.

use std::sync::OnceLock;

use super::FRANK_RHO_MAX;
use crate::numeric::{gauss_legendre, integrate};

// Strictly positive form of expm1(-t) + expm1(-t u) expm1(-t v) with its sign flipped.
fn denom(t: f64, u: f64, v: f64) -> f64 {
    (-t * u).exp() * -(-t * v).exp_m1() + (-t * v).exp() * -(-t * (1.0 - v)).exp_m1()
}

fn cdf_pos(t: f64, u: f64, v: f64) -> f64 {
    if t < 1.0 {
        let q = (-t * u).exp_m1() * (-t * v).exp_m1() / (-t).exp_m1();
        -q.ln_1p() / t
    } else {
        -(denom(t, u, v).ln() - (-(-t).exp_m1()).ln()) / t
    }
}

fn partial_u_pos(t: f64, u: f64, v: f64) -> f64 {
    (-t * u).exp() * -(-t * v).exp_m1() / denom(t, u, v)
}

pub(super) fn cdf(t: f64, u: f64, v: f64) -> f64 {
    if t > 0.0 {
        cdf_pos(t, u, v)
    } else {
        u - cdf_pos(-t, u, 1.0 - v)
    }
}

pub(super) fn partial_u(t: f64, u: f64, v: f64) -> f64 {
    if t > 0.0 {
        partial_u_pos(t, u, v)
    } else {
        1.0 - partial_u_pos(-t, u, 1.0 - v)
    }
}

pub(super) fn partial_v(t: f64, u: f64, v: f64) -> f64 {
    if t > 0.0 {
        partial_u_pos(t, v, u)
    } else {
        // d/dv [u - C(u, 1-v)] = C_2(u, 1-v), and C is exchangeable
        partial_u_pos(-t, 1.0 - v, u)
    }
}

fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// Integral of s / (e^s - 1) over [0, t] for t > 0.
fn debye_integral(t: f64) -> f64 {
    let upper = t.min(60.0);
    let panels = upper.ceil().max(1.0) as usize;
    integrate(|s| if s == 0.0 { 1.0 } else { s / s.exp_m1() }, 0.0, upper, panels, rule())
}

pub(super) fn tau(t: f64) -> f64 {
    if t < 0.0 {
        return -tau(-t);
    }
    if t < 1e-4 {
        return t / 9.0 - t.powi(3) / 900.0;
    }
    1.0 - 4.0 / t * (1.0 - debye_integral(t) / t)
}

/// Inverse of `tau` by bisection on [-FRANK_RHO_MAX, FRANK_RHO_MAX].
pub(super) fn rho_from_tau(target: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-FRANK_RHO_MAX, FRANK_RHO_MAX);
    if target <= tau(lo) || target >= tau(hi) {
        return None;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tau(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = 0.5 * (lo + hi);
    // the family excludes 0; tau = 0 is handled by the caller
    (rho != 0.0).then_some(rho)
}

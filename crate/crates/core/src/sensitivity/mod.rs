//! Sensitivity analysis along two axes: the copula dependence (Kendall's tau
//! curves) and hidden confounding of treatment assignment (Rosenbaum's Gamma).

mod curve;
mod gamma;

pub use curve::{tau_curve, SensitivityCurve, TauGrid};
pub use gamma::{
    breakeven_gamma, breakeven_over_taus, endpoint_coefficients, endpoint_m, endpoint_one_step, g_transform, gamma_table, margin_bounds, r_gamma,
    r_gamma_deriv, Breakeven, BreakevenStatus, EndpointTerms, GammaBoundResult, MarginBounds, Side,
};

/// Reporting grid 1, 1.1, ..., 3.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..=20).map(|i| 1.0 + i as f64 / 10.0).collect()
}

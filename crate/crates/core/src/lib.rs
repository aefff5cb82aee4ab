//! Copula-linked estimation of individual-level causal estimands for ordinal
//! outcomes: the probability of strict benefit `psi = P{Y(1) > Y(0)}`, of
//! benefit `phi = P{Y(1) >= Y(0)}`, and the relative effect `xi = phi + psi - 1`.
//!
//! The joint law of the two potential outcomes is tied to their identifiable
//! margins through a parametric copula whose dependence parameter is treated
//! as a sensitivity parameter. Estimation uses one-step (influence-function)
//! corrections, optionally cross-fitted, plus a Rosenbaum-type analysis of
//! hidden confounding.

pub mod copula;
pub mod error;
pub mod estimands;
pub mod nuisance;
pub mod numeric;
pub mod sensitivity;
pub mod simulation;

pub use copula::{CopulaSpec, Family};
pub use error::{Error, Result};
pub use estimands::{Estimand, EstimateResult, Mode};
pub use nuisance::{Dataset, NuisanceFit};

//! Simulation: latent-threshold data-generating processes, ground truth, and
//! replication studies.

mod dgp;
mod study;

pub use dgp::{
    even_thresholds, generate, generate_with, population_value, sample_conditional, true_nuisance, truth, DgpSpec,
    Features, Joint, SimulatedData, TauFn, Truth,
};
pub use study::{replication_rng, run_study, EstimatorConfig, StudyReport, StudyResult, FAILURE_BUDGET};

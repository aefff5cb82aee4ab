//! Estimator behavior on the latent-threshold designs.

use ordinal_causal::estimands::{cross_fit, unconditional_dr, Estimand};
use ordinal_causal::nuisance::{fit_full, ClipOptions, ParametricLearner};
use ordinal_causal::simulation::{generate, population_value, run_study, DgpSpec, EstimatorConfig, Truth};
use ordinal_causal::{CopulaSpec, Family, Mode};

#[test]
fn fold_count_does_not_move_the_estimate() {
    let sim = generate(&DgpSpec::baseline(5000), 21).unwrap();
    let gumbel = CopulaSpec::new(Family::Gumbel, 2.0).unwrap();
    let learner = ParametricLearner::default();
    let run = |k| cross_fit(&sim.data, k, 5, &gumbel, Estimand::Psi, 0.05, &learner, ClipOptions::default()).unwrap();
    let (a, b) = (run(2), run(10));
    assert!((a.point - b.point).abs() < 2.0 * a.se.max(b.se), "{} vs {}", a.point, b.point);
    assert_eq!(run(10), b);
}

#[test]
fn true_gumbel_curve_decreases_in_tau() {
    let spec = DgpSpec::baseline(10);
    let mut prev = f64::INFINITY;
    for i in 0..=18 {
        let tau = i as f64 * 0.05;
        let c = CopulaSpec::from_tau(Family::Gumbel, tau).unwrap();
        let v = population_value(&spec, Estimand::Psi, Some(&c)).unwrap();
        assert!(v <= prev + 1e-12, "tau {tau}: {v} after {prev}");
        prev = v;
    }
}

#[test]
fn gaussian_curve_tracks_gumbel_at_matched_tau() {
    let spec = DgpSpec::baseline(10);
    for i in 0..=5 {
        let tau = i as f64 * 0.1;
        let g = population_value(&spec, Estimand::Psi, Some(&CopulaSpec::from_tau(Family::Gumbel, tau).unwrap())).unwrap();
        let n = population_value(&spec, Estimand::Psi, Some(&CopulaSpec::from_tau(Family::Gaussian, tau).unwrap())).unwrap();
        assert!((g - n).abs() < 0.02, "tau {tau}: {g} vs {n}");
    }
}

#[test]
fn unconditional_dr_is_nearly_unbiased_on_exact_design() {
    let spec = DgpSpec::unconditional(1000);
    let truth = population_value(&spec, Estimand::Psi, None).unwrap();
    let gumbel = CopulaSpec::new(Family::Gumbel, 2.0).unwrap();
    let reps = 200;
    let mut bias = 0.0;
    let mut covered = 0;
    for seed in 0..reps {
        let sim = generate(&spec, 1000 + seed).unwrap();
        let fit = fit_full(&sim.data, &ParametricLearner::default(), ClipOptions::default()).unwrap();
        let r = unconditional_dr(&sim.data, &fit, &gumbel, Estimand::Psi, 0.05).unwrap();
        bias += r.point - truth;
        covered += r.covers(truth) as usize;
    }
    bias /= reps as f64;
    assert!(bias.abs() < 0.005, "bias {bias}");
    assert!(covered >= 180, "coverage {covered}/{reps}");
}

#[test]
fn crossfit_coverage_is_near_nominal() {
    let spec = DgpSpec::baseline(1000);
    let truth = Truth::from_quadrature(&spec).unwrap();
    let gumbel = CopulaSpec::new(Family::Gumbel, 2.0).unwrap();
    let est = [EstimatorConfig::new("cf", gumbel, Estimand::Psi, Mode::CrossFit)];
    let report = run_study(&spec, &est, &truth, 200, 0.05, 31).unwrap();
    let row = &report.rows[0];
    assert!((91.5..=98.5).contains(&row.coverage), "{row:?}");
}

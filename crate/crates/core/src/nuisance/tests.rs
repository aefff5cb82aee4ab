use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(n: usize, levels: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<usize> = (0..n).map(|i| (i / 2) % levels).collect();
    Dataset::new(y, a, x, levels).unwrap()
}

#[test]
fn dataset_rejects_bad_input() {
    let x = DMatrix::zeros(3, 1);
    assert!(Dataset::new(vec![0, 1, 3], vec![0, 1, 0], x.clone(), 3).is_err());
    assert!(Dataset::new(vec![0, 1, 1], vec![0, 2, 0], x.clone(), 3).is_err());
    assert!(Dataset::new(vec![0, 1, 1], vec![1, 1, 1], x.clone(), 3).is_err());
    assert!(Dataset::new(vec![1, 1, 1], vec![0, 1, 0], x.clone(), 3).is_err());
    let mut bad = x.clone();
    bad[(1, 0)] = f64::NAN;
    assert!(Dataset::new(vec![0, 1, 1], vec![0, 1, 0], bad, 3).is_err());
}

#[test]
fn absent_levels_are_collapsed() {
    let x = DMatrix::zeros(4, 0);
    let d = Dataset::new(vec![0, 2, 4, 2], vec![0, 1, 0, 1], x, 6).unwrap();
    assert_eq!(d.levels(), 3);
    assert_eq!(d.y(), &[0, 1, 2, 1]);
    assert_eq!(d.level_map(), &[0, 1, 1, 2, 2, 2]);
    assert!(d.is_collapsed());
}

#[test]
fn clipping_contract() {
    let raw = RawNuisance { e: vec![0.001, 0.5, 0.9995], f1: vec![0.0, 0.3, 0.2, 0.1, 0.5, 1.0], f0: vec![0.4, 0.3, 0.1, 0.2, 0.7, 0.8] };
    let fit = NuisanceFit::new(3, raw, ClipOptions::default()).unwrap();
    assert_eq!(fit.e(), &[0.01, 0.5, 0.99]);
    assert_eq!(fit.f1_row(0), &[1e-6, 0.3]);
    assert_eq!(fit.f1_row(1), &[0.2, 0.2]);
    assert_eq!(fit.f1_row(2), &[0.5, 1.0 - 1e-6]);
    assert_eq!(fit.f0_row(0), &[0.4, 0.4]);
}

#[test]
fn intercept_only_propensity_is_sample_mean() {
    let n = 60;
    let x = DMatrix::zeros(n, 0);
    let a: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let y: Vec<usize> = (0..n).map(|i| (i / 3) % 3).collect();
    let data = Dataset::new(y, a, x, 3).unwrap();
    let fit = fit_full(&data, &ParametricLearner::default(), ClipOptions::default()).unwrap();
    for &e in fit.e() {
        assert!((e - 1.0 / 3.0).abs() < 1e-10);
    }
}

#[test]
fn constant_propensity_override() {
    let data = toy(40, 3, 1);
    let learner = ParametricLearner { propensity: PropensityModel::Constant(0.5), outcome: OutcomeModel::PerArm };
    let fit = fit_full(&data, &learner, ClipOptions::default()).unwrap();
    assert!(fit.e().iter().all(|&e| e == 0.5));
    let bad = ParametricLearner { propensity: PropensityModel::Constant(1.0), outcome: OutcomeModel::Pooled };
    assert!(bad.fit(&data).is_err());
}

#[test]
fn folds_partition_and_are_reproducible() {
    let plan = make_folds(10, 5, 42).unwrap();
    let mut sizes = vec![0; 5];
    for &f in &plan.assignment {
        sizes[f] += 1;
    }
    assert_eq!(sizes, vec![2; 5]);
    assert_eq!(plan, make_folds(10, 5, 42).unwrap());
    assert_ne!(plan.assignment, make_folds(10, 5, 43).unwrap().assignment);
    let plan = make_folds(103, 10, 1).unwrap();
    let mut all: Vec<usize> = (0..10).flat_map(|f| plan.members(f)).collect();
    all.sort();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    assert!(make_folds(10, 1, 0).is_err());
    assert!(make_folds(3, 4, 0).is_err());
}

struct CountingLearner;
struct CountingPredictor(usize, usize);

impl NuisanceLearner for CountingLearner {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn NuisancePredictor>> {
        Ok(Box::new(CountingPredictor(train.n(), train.levels())))
    }
    fn name(&self) -> &'static str {
        "counting"
    }
}

impl NuisancePredictor for CountingPredictor {
    fn predict(&self, data: &Dataset) -> Result<RawNuisance> {
        let m = self.1 - 1;
        let n = data.n();
        Ok(RawNuisance { e: vec![self.0 as f64 / 100.0; n], f1: vec![0.5; n * m], f0: vec![0.5; n * m] })
    }
}

#[test]
fn leave_one_out_trains_on_n_minus_one() {
    let data = toy(12, 3, 2);
    let plan = make_folds(12, 12, 0).unwrap();
    let fit = fit_crossfit(&data, &plan, &CountingLearner, ClipOptions::default()).unwrap();
    assert!(fit.e().iter().all(|&e| e == 0.11));
}

#[test]
fn crossfit_is_bitwise_deterministic_across_thread_counts() {
    let data = toy(400, 4, 3);
    let plan = make_folds(400, 5, 9).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit_crossfit(&data, &plan, &ParametricLearner::default(), ClipOptions::default()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn fold_errors_carry_the_fold_index() {
    // level 2 occurs once, so the fold holding it trains without it
    let n = 30;
    let x = DMatrix::zeros(n, 0);
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mut y: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
    y[7] = 2;
    let data = Dataset::new(y, a, x, 3).unwrap();
    let plan = make_folds(n, 3, 0).unwrap();
    let err = fit_crossfit(&data, &plan, &ParametricLearner::default(), ClipOptions::default()).unwrap_err();
    match err {
        Error::Fold { fold, source } => {
            assert_eq!(fold, plan.assignment[7]);
            assert!(matches!(*source, Error::EmptyLevel { level: 2, .. }));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn stratified_learner_uses_cell_frequencies() {
    // two strata with known composition
    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut xs = Vec::new();
    for (s, rows) in [(0.0, [(1, 0), (1, 1), (0, 1), (0, 2), (1, 2)]), (1.0, [(0, 0), (1, 1), (0, 0), (1, 2), (0, 1)])] {
        for _ in 0..4 {
            for &(t, yy) in &rows {
                a.push(t as u8);
                y.push(yy);
                xs.push(s);
            }
        }
    }
    let n = y.len();
    let data = Dataset::new(y, a, DMatrix::from_vec(n, 1, xs), 3).unwrap();
    let fit = fit_full(&data, &StratifiedLearner, ClipOptions::default()).unwrap();
    assert!((fit.e()[0] - 0.6).abs() < 1e-15);
    let f1 = fit.f1_row(0);
    assert!((f1[0] - 1.0 / 3.0).abs() < 1e-15 && (f1[1] - 2.0 / 3.0).abs() < 1e-15);
    let f0 = fit.f0_row(0);
    assert!((f0[0] - 1e-6).abs() < 1e-15 && (f0[1] - 0.5).abs() < 1e-15);
}

#[test]
fn fit_rows_are_monotone_and_clipped() {
    let data = toy(500, 5, 4);
    for learner in [
        ParametricLearner::default(),
        ParametricLearner { propensity: PropensityModel::Logistic, outcome: OutcomeModel::PerArm },
    ] {
        let fit = fit_full(&data, &learner, ClipOptions::default()).unwrap();
        for i in 0..fit.n() {
            assert!(fit.e()[i] >= 0.01 && fit.e()[i] <= 0.99);
            for row in [fit.f1_row(i), fit.f0_row(i)] {
                assert!(row.windows(2).all(|w| w[0] <= w[1]));
                assert!(row.iter().all(|&v| (1e-6..=1.0 - 1e-6).contains(&v)));
            }
        }
    }
}

use super::*;
use crate::copula::Family;
use crate::nuisance::{fit_full, OutcomeModel, ParametricLearner, PropensityModel, RawNuisance};
use crate::numeric::expit;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_specs() -> Vec<CopulaSpec> {
    let mut v = vec![CopulaSpec::independence()];
    for f in Family::PARAMETRIC {
        for tau in [-0.5, 0.3, 0.7] {
            if let Ok(s) = CopulaSpec::from_tau(f, tau) {
                v.push(s);
            }
        }
    }
    v
}

/// Sorted margins in [0.02, 0.98] with gaps of at least 0.01.
fn random_row(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let mut r: Vec<f64> = (0..m).map(|_| rng.random_range(0.02..0.98)).collect();
        r.sort_by(f64::total_cmp);
        if r.windows(2).all(|w| w[1] - w[0] > 0.01) {
            return r;
        }
    }
}

fn pmf(row: &[f64]) -> Vec<f64> {
    (0..=row.len() as isize).map(|k| margin(row, k) - margin(row, k - 1)).collect()
}

#[test]
fn independence_grid_is_outer_product() {
    let g = cell_grid(&[0.4], &[0.7], &CopulaSpec::independence()).unwrap();
    let want = [[0.28, 0.12], [0.42, 0.18]];
    for k in 0..2 {
        for j in 0..2 {
            assert!((g.pi(k, j) - want[k][j]).abs() < 1e-15);
        }
    }
    assert!((m_value(Estimand::Psi, &g) - 0.42).abs() < 1e-15);
}

#[test]
fn comonotone_grid_is_diagonal() {
    let row = [0.2, 0.55];
    let g = cell_grid(&row, &row, &CopulaSpec::frechet_upper()).unwrap();
    let p = pmf(&row);
    for k in 0..3 {
        for j in 0..3 {
            let want = if k == j { p[k] } else { 0.0 };
            assert!((g.pi(k, j) - want).abs() < 1e-15, "({k},{j})");
        }
    }
    assert_eq!(m_value(Estimand::Psi, &g), 0.0);
}

#[test]
fn grid_margins_match_pmfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut specs = smooth_specs();
    specs.push(CopulaSpec::frechet_lower());
    specs.push(CopulaSpec::frechet_upper());
    for s in &specs {
        for m in 1..5 {
            let (f1, f0) = (random_row(&mut rng, m), random_row(&mut rng, m));
            let g = cell_grid(&f1, &f0, s).unwrap();
            for (a, b) in g.row_sums().iter().zip(pmf(&f1)) {
                assert!((a - b).abs() < 1e-10, "{s}");
            }
            for (a, b) in g.col_sums().iter().zip(pmf(&f0)) {
                assert!((a - b).abs() < 1e-10, "{s}");
            }
            let diag: f64 = (0..=m).map(|k| g.pi(k, k)).sum();
            let gap = m_value(Estimand::Phi, &g) - m_value(Estimand::Psi, &g);
            assert!((gap - diag).abs() < 1e-14);
            for e in Estimand::ALL {
                assert!((m_value(e, &g) - m_from_margins(e, &f1, &f0, s)).abs() < 1e-12, "{s} {e}");
            }
        }
    }
}

#[test]
fn non_monotone_margins_rejected() {
    let err = cell_grid(&[0.5, 0.3], &[0.2, 0.4], &CopulaSpec::independence()).unwrap_err();
    assert!(matches!(err, Error::InconsistentMargins { index: 1, .. }));
}

#[test]
fn independence_deltas_are_negative_pmf() {
    let f1 = [0.1, 0.4, 0.8];
    let f0 = [0.3, 0.5, 0.9];
    let d = delta_coeffs(Estimand::Psi, &f1, &f0, &CopulaSpec::independence()).unwrap();
    let p0 = pmf(&f0);
    for k in 0..3 {
        assert!((d.d1[k] + p0[k]).abs() < 1e-15);
    }
}

#[test]
fn psi_delta_signs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in smooth_specs() {
        for _ in 0..1000 {
            let m = rng.random_range(1..5);
            let (f1, f0) = (random_row(&mut rng, m), random_row(&mut rng, m));
            let d = delta_coeffs(Estimand::Psi, &f1, &f0, &s).unwrap();
            assert!(d.d1.iter().all(|&v| v <= 0.0) && d.d0.iter().all(|&v| v >= 0.0), "{s}");
        }
    }
}

#[test]
fn deltas_match_finite_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in smooth_specs() {
        for e in Estimand::ALL {
            for _ in 0..50 {
                let m = rng.random_range(1..5);
                let (f1, f0) = (random_row(&mut rng, m), random_row(&mut rng, m));
                let d = delta_coeffs(e, &f1, &f0, &s).unwrap();
                for k in 0..m {
                    for arm in [1, 0] {
                        let bump = |sign: f64| {
                            let (mut a, mut b) = (f1.clone(), f0.clone());
                            if arm == 1 {
                                a[k] += sign * h;
                            } else {
                                b[k] += sign * h;
                            }
                            m_from_margins(e, &a, &b, &s)
                        };
                        let fd = (bump(1.0) - bump(-1.0)) / (2.0 * h);
                        let an = if arm == 1 { d.d1[k] } else { d.d0[k] };
                        assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-2), "{s} {e} arm {arm} k {k}: {an} vs {fd}");
                    }
                }
            }
        }
    }
}

#[test]
fn xi_deltas_are_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in smooth_specs() {
        let (f1, f0) = (random_row(&mut rng, 4), random_row(&mut rng, 4));
        let p = delta_coeffs(Estimand::Psi, &f1, &f0, &s).unwrap();
        let q = delta_coeffs(Estimand::Phi, &f1, &f0, &s).unwrap();
        let x = delta_coeffs(Estimand::Xi, &f1, &f0, &s).unwrap();
        for k in 0..4 {
            assert!((x.d1[k] - p.d1[k] - q.d1[k]).abs() < 1e-14);
            assert!((x.d0[k] - p.d0[k] - q.d0[k]).abs() < 1e-14);
        }
    }
}

#[test]
fn frechet_families_have_no_deltas() {
    for s in [CopulaSpec::frechet_lower(), CopulaSpec::frechet_upper()] {
        assert!(matches!(delta_coeffs(Estimand::Psi, &[0.3], &[0.5], &s), Err(Error::UnsupportedCopula(_))));
    }
}

/// Observational data from a proportional-odds model with independent
/// potential outcomes given X.
fn observational(n: usize, levels: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let cuts: Vec<f64> = (0..levels - 1).map(|k| -1.0 + 2.0 * k as f64 / (levels - 1) as f64).collect();
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_bool(expit(0.3 * x[(i, 0)] - 0.4 * x[(i, 1)])) as u8;
        let eta = 0.5 * x[(i, 0)] + 0.3 * x[(i, 1)] + 0.4 * t as f64;
        let u: f64 = rng.random();
        y.push(cuts.iter().position(|&c| u <= expit(c - eta)).unwrap_or(levels - 1));
        a.push(t);
    }
    Dataset::new(y, a, x, levels).unwrap()
}

#[test]
fn influence_values_have_zero_mean_and_xi_identity() {
    let data = observational(800, 4, 5);
    let fit = fit_full(&data, &ParametricLearner::default(), ClipOptions::default()).unwrap();
    for s in smooth_specs() {
        for mode in [Mode::OneStep, Mode::UnconditionalDr] {
            let r: Vec<_> = Estimand::ALL.iter().map(|&e| estimate(&data, &fit, &s, e, 0.05, mode).unwrap()).collect();
            for res in &r {
                assert!(stable_mean(&res.if_values).abs() < 1e-12);
                let n = res.if_values.len() as f64;
                let var: f64 = res.if_values.iter().map(|v| v * v).sum::<f64>() / n;
                assert!((res.se - (var / n).sqrt()).abs() < 1e-15);
            }
            assert_eq!(r[2].raw_point, r[0].raw_point + r[1].raw_point - 1.0);
            if mode == Mode::OneStep {
                // the direct xi route with summed deltas agrees
                let direct = scored(&data, &fit, &s, Estimand::Xi, 0.05, Mode::OneStep);
                assert!((direct.raw_point - r[2].raw_point).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn randomized_independence_matches_empirical_margins() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 2000;
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let data = Dataset::new(y.clone(), a.clone(), DMatrix::zeros(n, 0), 4).unwrap();
    let learner = ParametricLearner { propensity: PropensityModel::Constant(0.5), outcome: OutcomeModel::PerArm };
    let fit = fit_full(&data, &learner, ClipOptions::default()).unwrap();
    let r = one_step(&data, &fit, &CopulaSpec::independence(), Estimand::Psi, 0.05).unwrap();
    let count = |arm: u8, k: usize| (0..n).filter(|&i| a[i] == arm && y[i] == k).count() as f64 / (n / 2) as f64;
    let closed: f64 = (0..4).map(|k| count(1, k) * (0..k).map(|j| count(0, j)).sum::<f64>()).sum();
    assert!((r.raw_point - closed).abs() < 3.0 * r.se);
    assert!((r.raw_point - closed).abs() < 1e-8);
}

#[test]
fn dr_margins_collapse_to_ipw_with_saturated_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 400;
    let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let data = Dataset::new(y.clone(), a.clone(), DMatrix::zeros(n, 0), 2).unwrap();
    let learner = ParametricLearner { propensity: PropensityModel::Constant(0.5), outcome: OutcomeModel::PerArm };
    let fit = fit_full(&data, &learner, ClipOptions::default()).unwrap();
    let (f1, f0) = dr_unconditional_margins(&data, &fit).unwrap();
    let ipw = |arm: u8| (0..n).filter(|&i| a[i] == arm && y[i] == 0).count() as f64 / (0.5 * n as f64);
    assert!((f1[0] - ipw(1)).abs() < 1e-14);
    assert!((f0[0] - ipw(0)).abs() < 1e-14);
}

#[test]
fn unconditional_influence_matches_numerical_derivative() {
    // perturbing one unit's weight moves the estimate by its influence value
    let data = observational(300, 3, 8);
    let fit = fit_full(&data, &ParametricLearner::default(), ClipOptions::default()).unwrap();
    let s = CopulaSpec::from_tau(Family::Gumbel, 0.5).unwrap();
    let r = unconditional_dr(&data, &fit, &s, Estimand::Psi, 0.05).unwrap();
    let dr = dr_margins(&data, &fit);
    let m = 2;
    let n = data.n();
    let eps = 1e-6;
    for i in [0usize, 17, 123] {
        let tilt = |w: f64| {
            let mean = |aug: &[f64], k: usize| {
                let tot: f64 = (0..n).map(|j| aug[j * m + k] * if j == i { 1.0 + w } else { 1.0 }).sum();
                tot / (n as f64 + w)
            };
            let f1: Vec<f64> = (0..m).map(|k| mean(&dr.aug1, k)).collect();
            let f0: Vec<f64> = (0..m).map(|k| mean(&dr.aug0, k)).collect();
            m_from_margins(Estimand::Psi, &f1, &f0, &s)
        };
        let fd = (tilt(eps) - tilt(-eps)) / (2.0 * eps) * n as f64;
        assert!((fd - r.if_values[i]).abs() < 1e-5, "{fd} vs {}", r.if_values[i]);
    }
}

#[test]
fn one_step_rejects_frechet_and_bad_alpha() {
    let data = observational(100, 3, 9);
    let fit = fit_full(&data, &ParametricLearner::default(), ClipOptions::default()).unwrap();
    assert!(one_step(&data, &fit, &CopulaSpec::frechet_upper(), Estimand::Psi, 0.05).is_err());
    assert!(one_step(&data, &fit, &CopulaSpec::independence(), Estimand::Psi, 0.0).is_err());
}

#[test]
fn cross_fit_is_seed_deterministic() {
    let data = observational(600, 3, 10);
    let s = CopulaSpec::from_tau(Family::Frank, 0.4).unwrap();
    let run = |seed| {
        cross_fit(&data, 5, seed, &s, Estimand::Psi, 0.05, &ParametricLearner::default(), ClipOptions::default()).unwrap()
    };
    let a = run(11);
    assert_eq!(a, run(11));
    assert_eq!(a.mode, Mode::CrossFit);
    assert_ne!(a.raw_point, run(12).raw_point);
}

#[test]
fn clipped_point_keeps_raw_value() {
    let raw = RawNuisance { e: vec![0.5; 4], f1: vec![0.01; 4], f0: vec![0.99; 4] };
    let fit = NuisanceFit::new(2, raw, ClipOptions::default()).unwrap();
    let data = Dataset::new(vec![1, 1, 0, 0], vec![1, 0, 1, 0], DMatrix::zeros(4, 0), 2).unwrap();
    let r = one_step(&data, &fit, &CopulaSpec::independence(), Estimand::Psi, 0.05).unwrap();
    assert!(r.point >= 0.0 && r.point <= 1.0);
    assert_eq!(r.point, r.raw_point.clamp(0.0, 1.0));
    assert!(r.ci_low <= r.raw_point && r.raw_point <= r.ci_high);
}

/// min and max of pr{Y1 > Y0} (psi) or pr{Y1 >= Y0} (phi) over all
/// couplings of two pmfs, by linear programming.
fn lp_bounds(p1: &[f64], p0: &[f64], estimand: Estimand) -> (f64, f64) {
    let l = p1.len();
    let solve = |dir| {
        let mut pb = Problem::new(dir);
        let mut vars = Vec::new();
        for k in 0..l {
            for j in 0..l {
                let hit = match estimand {
                    Estimand::Psi => k > j,
                    _ => k >= j,
                };
                vars.push(pb.add_var(if hit { 1.0 } else { 0.0 }, (0.0, f64::INFINITY)));
            }
        }
        for k in 0..l {
            let row: Vec<_> = (0..l).map(|j| (vars[k * l + j], 1.0)).collect();
            pb.add_constraint(&row, ComparisonOp::Eq, p1[k]);
        }
        for j in 0..l - 1 {
            let col: Vec<_> = (0..l).map(|k| (vars[k * l + j], 1.0)).collect();
            pb.add_constraint(&col, ComparisonOp::Eq, p0[j]);
        }
        pb.solve().unwrap().objective()
    };
    (solve(OptimizationDirection::Minimize), solve(OptimizationDirection::Maximize))
}

#[test]
fn unit_bounds_are_sharp_against_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let m = rng.random_range(1..5);
        let (f1, f0) = (random_row(&mut rng, m), random_row(&mut rng, m));
        for e in [Estimand::Psi, Estimand::Phi] {
            let (lo, hi) = unit_bounds(e, &f1, &f0);
            let (lp_lo, lp_hi) = lp_bounds(&pmf(&f1), &pmf(&f0), e);
            assert!((lo - lp_lo).abs() < 1e-9 && (hi - lp_hi).abs() < 1e-9, "{e} {f1:?} {f0:?}: ({lo},{hi}) vs ({lp_lo},{lp_hi})");
        }
    }
}

#[test]
fn two_level_bounds_are_frechet_copula_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let (f1, f0) = ([rng.random::<f64>()], [rng.random::<f64>()]);
        for e in Estimand::ALL {
            let w = m_from_margins(e, &f1, &f0, &CopulaSpec::frechet_lower());
            let mm = m_from_margins(e, &f1, &f0, &CopulaSpec::frechet_upper());
            let (lo, hi) = unit_bounds(e, &f1, &f0);
            assert!((lo - w.min(mm)).abs() < 1e-12 && (hi - w.max(mm)).abs() < 1e-12, "{e}");
        }
    }
}

/// Every nonnegative integer table with the given row and column sums.
fn integer_tables(rows: &[usize], cols: &[usize], out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, left: &mut Vec<usize>) {
    let l = cols.len();
    let cell = cur.len();
    if cell == rows.len() * l {
        out.push(cur.clone());
        return;
    }
    let (k, j) = (cell / l, cell % l);
    let used: usize = cur[k * l..].iter().sum();
    let row_left = rows[k] - used;
    let range = if j == l - 1 { row_left..=row_left } else { 0..=row_left.min(left[j]) };
    for v in range {
        if v > left[j] {
            continue;
        }
        left[j] -= v;
        cur.push(v);
        integer_tables(rows, cols, out, cur, left);
        cur.pop();
        left[j] += v;
    }
}

fn composition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut c = vec![0; parts];
    for _ in 0..total {
        c[rng.random_range(0..parts)] += 1;
    }
    c
}

#[test]
fn xi_bounds_match_integer_enumeration() {
    // transport polytopes with integer margins have integer vertices
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..60 {
        let l = rng.random_range(2..5);
        let total = if l == 4 { 6 } else { 9 };
        let (r, c) = (composition(&mut rng, total, l), composition(&mut rng, total, l));
        let mut tables = Vec::new();
        integer_tables(&r, &c, &mut tables, &mut Vec::new(), &mut c.clone());
        let objective = |t: &Vec<usize>| {
            let mut v = 0i64;
            for k in 0..l {
                for j in 0..l {
                    v += t[k * l + j] as i64 * (k as i64 - j as i64).signum();
                }
            }
            v as f64 / total as f64
        };
        let want_lo = tables.iter().map(objective).fold(f64::INFINITY, f64::min);
        let want_hi = tables.iter().map(objective).fold(f64::NEG_INFINITY, f64::max);
        let cum = |p: &[usize]| -> Vec<f64> {
            p[..l - 1].iter().scan(0, |s, &x| { *s += x; Some(*s as f64 / total as f64) }).collect()
        };
        let (lo, hi) = unit_bounds(Estimand::Xi, &cum(&r), &cum(&c));
        assert!((lo - want_lo).abs() < 1e-9 && (hi - want_hi).abs() < 1e-9, "{r:?} {c:?}: ({lo},{hi}) vs ({want_lo},{want_hi})");
    }
}

#[test]
fn identical_margins_give_zero_lower_psi() {
    let row = [0.1, 0.35, 0.7];
    assert_eq!(unit_bounds(Estimand::Psi, &row, &row).0, 0.0);
}

#[test]
fn every_copula_lies_inside_unit_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for s in smooth_specs() {
        for _ in 0..200 {
            let m = rng.random_range(1..5);
            let (f1, f0) = (random_row(&mut rng, m), random_row(&mut rng, m));
            for e in Estimand::ALL {
                let v = m_from_margins(e, &f1, &f0, &s);
                let (lo, hi) = unit_bounds(e, &f1, &f0);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{s} {e}");
            }
        }
    }
}


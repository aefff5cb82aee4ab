use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use ordinal_causal::simulation::{generate, DgpSpec};

const BIN: &str = env!("CARGO_BIN_EXE_ordinal-causal");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("ORDINAL_CAUSAL_THREADS").output().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

/// Simulated baseline data; `offset` shifts the outcome coding.
fn sim_csv(dir: &Path, name: &str, n: usize, seed: u64, offset: usize) -> PathBuf {
    let sim = generate(&DgpSpec::baseline(n), seed).unwrap();
    let d = &sim.data;
    let mut s = String::from("y,a,x1,x2,x3\n");
    for i in 0..d.n() {
        let x = d.x();
        s += &format!("{},{},{},{},{}\n", d.y()[i] + offset, d.a()[i], x[(i, 0)], x[(i, 1)], x[(i, 2)]);
    }
    let p = dir.join(name);
    fs::write(&p, s).unwrap();
    p
}

fn analysis(extra: Value) -> Value {
    let mut base = json!({
        "version": 1,
        "columns": {"outcome": "y", "treatment": "a", "covariates": ["x1", "x2", "x3"]},
        "copula": {"family": "gumbel", "tau": 0.5},
    });
    for (k, v) in extra.as_object().unwrap() {
        base[k] = v.clone();
    }
    base
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn json_out(out: &Output) -> Value {
    ok(out);
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn toy_table_matches_hand_calculation() {
    let dir = TempDir::new().unwrap();
    // treated outcomes 0,1,2,2; control outcomes 0,0,1,2
    fs::write(dir.path().join("toy.csv"), "y,a\n0,1\n1,1\n2,1\n2,1\n0,0\n0,0\n1,0\n2,0\n").unwrap();
    let cfg = json!({
        "version": 1,
        "input": "toy.csv",
        "columns": {"outcome": "y", "treatment": "a"},
        "copula": {"family": "independence"},
        "estimands": ["psi", "phi", "xi"],
        "nuisance": {"model": "stratified", "propensity": 0.5},
    });
    write_json(dir.path(), "c.json", &cfg);
    let v = json_out(&run(&["estimate", "--config", "c.json", "--format", "json"], dir.path()));
    let r = v["results"].as_array().unwrap();
    // p1 = (1/4, 1/4, 1/2), p0 = (1/2, 1/4, 1/4)
    let psi = 0.25 * 0.5 + 0.5 * 0.75;
    let tie = 0.25 * 0.5 + 0.25 * 0.25 + 0.5 * 0.25;
    for (row, want) in r.iter().zip([psi, psi + tie, 2.0 * psi + tie - 1.0]) {
        assert!((row["point"].as_f64().unwrap() - want).abs() < 1e-12, "{row} vs {want}");
    }
}

#[test]
fn missing_column_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 50, 1, 0);
    let mut cfg = analysis(json!({}));
    cfg["columns"]["covariates"] = json!(["x1", "age"]);
    write_json(dir.path(), "c.json", &cfg);
    let out = run(&["estimate", "--config", "c.json", "--input", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'age'"));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 50, 1, 0);
    let cases = [
        analysis(json!({"alhpa": 0.05})),
        analysis(json!({"copula": {"family": "gumbel", "tau": 0.5, "rho": 2.0}})),
        analysis(json!({"alpha": 0.7})),
        analysis(json!({"version": 2})),
        analysis(json!({"copula": {"family": "clayton", "tau": -0.3}})),
    ];
    for (i, cfg) in cases.iter().enumerate() {
        write_json(dir.path(), "c.json", cfg);
        let out = run(&["estimate", "--config", "c.json", "--input", "d.csv", "--out", "r.csv"], dir.path());
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!dir.path().join("r.csv").exists(), "case {i} left output behind");
    }
    write_json(dir.path(), "c.json", &cases[0]);
    let out = run(&["estimate", "--config", "c.json", "--input", "d.csv"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"), "json errors name the line");
}

#[test]
fn separation_is_a_fit_failure() {
    let dir = TempDir::new().unwrap();
    let mut s = String::from("y,a,x\n");
    for i in 0..40 {
        let a = i % 2;
        s += &format!("{},{},{}\n", (i / 2) % 3, a, a as f64 + 0.01 * i as f64);
    }
    fs::write(dir.path().join("sep.csv"), s).unwrap();
    let mut cfg = analysis(json!({"input": "sep.csv"}));
    cfg["columns"]["covariates"] = json!(["x"]);
    write_json(dir.path(), "c.json", &cfg);
    let out = run(&["estimate", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("propensity"));
}

#[test]
fn relabeled_outcomes_give_identical_results() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "zero.csv", 400, 3, 0);
    sim_csv(dir.path(), "one.csv", 400, 3, 1);
    write_json(dir.path(), "a.json", &analysis(json!({"estimands": ["psi", "xi"]})));
    let levels = json!(["1", "2", "3", "4", "5"]);
    write_json(dir.path(), "b.json", &analysis(json!({"estimands": ["psi", "xi"], "outcome_levels": levels})));
    let a = run(&["estimate", "--config", "a.json", "--input", "zero.csv"], dir.path());
    let b = run(&["estimate", "--config", "b.json", "--input", "one.csv"], dir.path());
    ok(&a);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn single_point_curve_equals_estimate() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 500, 4, 0);
    write_json(dir.path(), "c.json", &analysis(json!({"tau_grid": [0.5]})));
    let est = json_out(&run(&["estimate", "--config", "c.json", "--input", "d.csv", "--format", "json"], dir.path()));
    let curve = json_out(&run(&["curve", "--config", "c.json", "--input", "d.csv", "--format", "json"], dir.path()));
    let (e, c) = (&est["results"][0], &curve["rows"][0]);
    for k in ["point", "se", "ci_low", "ci_high", "env_low", "env_high"] {
        assert_eq!(e[k], c[k], "{k}");
    }
}

#[test]
fn curve_csv_has_stable_columns_and_decreases() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 2000, 5, 0);
    write_json(dir.path(), "c.json", &analysis(json!({})));
    ok(&run(&["curve", "--config", "c.json", "--input", "d.csv", "--out", "curve.csv"], dir.path()));
    let mut rdr = csv::Reader::from_path(dir.path().join("curve.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["tau", "point", "se", "ci_low", "ci_high", "env_low", "env_high"]);
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 10);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1] + 1e-12, "psi curve should not increase in tau");
        assert_eq!((w[0][5], w[0][6]), (w[1][5], w[1][6]), "envelope is constant");
    }
}

#[test]
fn gamma_table_nests_and_breakeven_matches_scan() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 1000, 6, 0);
    let grid: Vec<f64> = (0..=300).map(|i| 1.0 + i as f64 * 0.01).collect();
    let cfg = analysis(json!({"estimands": ["xi"], "gamma_grid": grid, "breakeven": {"gamma_max": 4.0}}));
    write_json(dir.path(), "c.json", &cfg);
    let est = json_out(&run(&["estimate", "--config", "c.json", "--input", "d.csv", "--format", "json"], dir.path()));
    let g = json_out(&run(&["gamma", "--config", "c.json", "--input", "d.csv", "--format", "json"], dir.path()));
    let table = g["table"].as_array().unwrap();
    let point = &est["results"][0]["point"];
    assert_eq!(&table[0]["lower"], point);
    assert_eq!(&table[0]["upper"], point);
    for w in table.windows(2) {
        assert!(w[1]["lower"].as_f64() <= w[0]["lower"].as_f64());
        assert!(w[1]["upper"].as_f64() >= w[0]["upper"].as_f64());
    }
    // largest grid Gamma whose union interval excludes zero
    let excl = |r: &Value| r["lower_ci_low"].as_f64().unwrap() > 0.0 || r["upper_ci_high"].as_f64().unwrap() < 0.0;
    let scan = table.iter().take_while(|r| excl(r)).last().map(|r| r["gamma"].as_f64().unwrap());
    let b = &g["breakeven"];
    assert_eq!(b["status"], "found", "{b}");
    let found = b["gamma"].as_f64().unwrap();
    assert!((found - scan.unwrap()).abs() < 0.02, "breakeven {found} vs scan {scan:?}");
}

#[test]
fn gamma_csv_writes_breakeven_report_beside_table() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 500, 7, 0);
    let cfg = analysis(json!({"estimands": ["psi"], "tau_grid": [0.3, 0.6], "breakeven": {"null_value": 0.2}}));
    write_json(dir.path(), "c.json", &cfg);
    ok(&run(&["gamma", "--config", "c.json", "--input", "d.csv", "--out", "g.csv"], dir.path()));
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("g.breakeven.json")).unwrap()).unwrap();
    let per = report["per_tau"].as_array().unwrap();
    assert_eq!(per.len(), 2);
    let min = per.iter().map(|b| b["gamma"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(report["gamma"].as_f64().unwrap(), min);
    let rows = csv::Reader::from_path(dir.path().join("g.csv")).unwrap().records().count();
    assert_eq!(rows, 21);
}

#[test]
fn gamma_requires_a_null_for_psi() {
    let dir = TempDir::new().unwrap();
    sim_csv(dir.path(), "d.csv", 50, 1, 0);
    write_json(dir.path(), "c.json", &analysis(json!({})));
    let out = run(&["gamma", "--config", "c.json", "--input", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

fn sim_config(n: usize, reps: usize) -> Value {
    json!({
        "version": 1,
        "seed": 11,
        "simulation": {
            "scenario": {"name": "baseline"},
            "n": n,
            "n_reps": reps,
            "estimators": [
                {"label": "par", "copula": {"family": "gumbel", "rho": 2.0}},
                {"label": "pgb3", "copula": {"family": "gumbel", "rho": 3.0}}
            ]
        }
    })
}

#[test]
fn simulate_reproduces_the_calibrated_row() {
    let dir = TempDir::new().unwrap();
    write_json(dir.path(), "s.json", &sim_config(1000, 200));
    ok(&run(&["simulate", "--config", "s.json", "--out", "t.csv"], dir.path()));
    let mut rdr = csv::Reader::from_path(dir.path().join("t.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    for col in ["bias_x1000", "sd_x1000", "rmse_x1000", "coverage", "sbc"] {
        assert!(header.iter().any(|h| h == col), "missing {col}");
    }
    let rec = rdr.records().next().unwrap().unwrap();
    let get = |c: &str| rec[header.iter().position(|h| h == c).unwrap()].parse::<f64>().unwrap();
    assert!(get("bias_x1000").abs() < 10.0);
    assert!((24.0..=38.0).contains(&get("sd_x1000")));
    assert!((91.5..=98.5).contains(&get("coverage")));
    assert!(get("sbc") >= 99.0);
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    write_json(dir.path(), "s.json", &sim_config(300, 10));
    let a = run(&["simulate", "--config", "s.json", "--seed", "5", "--threads", "1"], dir.path());
    let b = run(&["simulate", "--config", "s.json", "--seed", "5", "--threads", "3"], dir.path());
    let c = run(&["simulate", "--config", "s.json", "--seed", "6"], dir.path());
    ok(&a);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn simulate_rejects_zero_replications() {
    let dir = TempDir::new().unwrap();
    write_json(dir.path(), "s.json", &sim_config(300, 0));
    let out = run(&["simulate", "--config", "s.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use jumpdcaa::config::PlanConfig;
use jumpdcaa::model::{MarketSpec, ModelParams};
use jumpdcaa::optimizer::{evaluate_linearized, grid_oracle};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_jumpdcaa"));
    c.env_remove("DCAA_OUT_DIR");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/sample_prices.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn assert_json_close(got: &Value, want: &Value, path: &str) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{path}: {a} vs {b}");
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: length");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_json_close(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            let mut ka: Vec<_> = a.keys().collect();
            let mut kb: Vec<_> = b.keys().collect();
            ka.sort();
            kb.sort();
            assert_eq!(ka, kb, "{path}: keys");
            for (k, v) in b {
                assert_json_close(&a[k], v, &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn simulate_requires_a_seed() {
    let model = data("model.json");
    let out = run(&["simulate", "--model", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn errors_are_json_on_stderr() {
    let out = run(&["optimize", "--model", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("here.json"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "date,A\n2020-01-02,1\n2020-01-01,2\n").unwrap();
    let out = run(&["calibrate", "--prices", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"), "{err}");
}

#[test]
fn optimize_matches_golden_report_and_grid_search() {
    let model = data("model.json");
    let out = run(&["optimize", "--model", model.to_str().unwrap(), "--k-star", "0.9"]);
    let got = stdout_json(&out);
    let want: Value = serde_json::from_str(&std::fs::read_to_string(data("optimize_k0.9.json")).unwrap()).unwrap();
    assert_json_close(&got, &want, "$");

    // Independent check: no feasible grid point beats the reported allocation.
    let spec: MarketSpec = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let params = ModelParams::new(spec).unwrap();
    let plan = PlanConfig::default().plan_for(0.9, params.r()).unwrap();
    let x: Vec<f64> = got["allocation"]["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let at_x = evaluate_linearized(&params, &plan, &x).unwrap();
    assert!(at_x.risk_floor_slack > -1e-9 && at_x.drift_cap_slack > -1e-9);
    let (_, best) = grid_oracle(&params, &plan, &[(-1.0, 2.0), (-1.0, 2.0)], 201).unwrap();
    assert!(best <= at_x.objective + 1e-9, "grid {best} > reported {}", at_x.objective);
}

#[test]
fn calibrate_round_trips_through_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["calibrate", "--prices", fixture().to_str().unwrap()]);
    assert!(out.status.success());
    let model = dir.path().join("model.json");
    std::fs::write(&model, &out.stdout).unwrap();
    let report = stdout_json(&run(&["optimize", "--model", model.to_str().unwrap()]));
    assert!(report["q"].as_f64().unwrap().is_finite());
}

fn read_summary(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn backtest_writes_a_monotone_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "backtest", "--prices"])
        .arg(fixture())
        .args(["--start", "2020-08-01"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_summary(dir.path());
    assert_eq!(rows[0], ["k_star", "W_1", "W_2", "W_3", "W_4", "W_5", "W_6", "return_pct"]);
    assert_eq!(rows.len(), 5);
    let k: Vec<f64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(k, [0.5, 0.85, 0.9, 0.95]);
    let w6: Vec<f64> = rows[1..].iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(w6.windows(2).all(|w| w[1] <= w[0]), "{w6:?}");
    for k in ["0.5", "0.85", "0.9", "0.95"] {
        assert!(dir.path().join(format!("ledger_k{k}.csv")).is_file());
        assert!(dir.path().join(format!("ledger_k{k}.json")).is_file());
    }
    assert!(dir.path().join("summary.json").is_file());
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("DCAA_OUT_DIR", dir.path())
        .args(["backtest", "--k-star", "0.9", "--prices"])
        .arg(fixture())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("summary.csv").is_file());
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().to_string(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let model = data("model.json");
    let mut results = Vec::new();
    for workers in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let sim = run(&[
            "--workers", workers, "--out-dir", d, "simulate", "--model", model.to_str().unwrap(),
            "--seed", "11", "--paths", "5000",
        ]);
        assert!(sim.status.success());
        let bt = run(&["--workers", workers, "--out-dir", d, "backtest", "--prices", fixture().to_str().unwrap()]);
        assert!(bt.status.success());
        results.push((files_in(dir.path()), bt.stdout));
    }
    assert_eq!(results[0].0.len(), 12);
    assert!(results[0] == results[1], "outputs differ between 1 and 4 workers");
}

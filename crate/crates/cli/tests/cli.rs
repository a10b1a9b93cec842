use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levy_scale::ph::sample_coxian;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levy-scale"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_valid("error", &v);
    v
}

fn assert_valid(schema: &str, instance: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{} violations: {errors:?}", path.display());
}

fn write_model(dir: &TempDir, name: &str, model: &Value) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, serde_json::to_string(model).unwrap()).unwrap();
    path
}

fn model_a(dir: &TempDir) -> PathBuf {
    write_model(
        dir,
        "a.json",
        &json!({ "sigma": 0.0, "drift": 2.0, "lambda": 1.0, "alpha": [1.0], "T": [[-1.0]] }),
    )
}

fn model_b(dir: &TempDir) -> PathBuf {
    write_model(
        dir,
        "b.json",
        &json!({ "sigma": 2f64.sqrt(), "drift": 1.0, "lambda": 1.0, "alpha": [1.0], "T": [[-2.0]] }),
    )
}

fn coxian_model(dir: &TempDir, n: usize, seed: u64, sigma: f64) -> PathBuf {
    let ph = sample_coxian(n, seed, 0.9).unwrap();
    let t = ph.sub_generator();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| t[(i, j)]).collect()).collect();
    let alpha: Vec<f64> = ph.alpha().iter().copied().collect();
    write_model(
        dir,
        &format!("cox{n}_{seed}.json"),
        &json!({ "sigma": sigma, "drift": 1.0, "lambda": 1.0, "alpha": alpha, "T": rows }),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// Fixed-point map for Model B (sigma^2 = 2, d = 1, lambda = 1, Exp(2)) with q = 1.
fn model_b_map(a: f64) -> f64 {
    (1.0 + (9.0 - 8.0 / (a + 1.0)).sqrt()) / 2.0
}

#[test]
fn solve_model_b_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let m = model_b(&dir);
    let v = stdout_json(&run(&["solve", s(&m), "--q", "1", "--tol", "1e-13"]));
    assert_valid("solve", &v);
    let a = 3f64.sqrt();
    assert!((v["a"].as_f64().unwrap() - a).abs() < 1e-10);
    assert!((v["b"][0].as_f64().unwrap() - (a - 1.0) / 2.0).abs() < 1e-10);
    assert!((v["phi"].as_f64().unwrap() - (a - 1.0)).abs() < 1e-10);
    let h = 1e-6;
    let rate = (model_b_map(a + h) - model_b_map(a - h)) / (2.0 * h);
    assert!((v["theoretical_rate"].as_f64().unwrap() - rate).abs() < 1e-8);
    assert_eq!(v["kind"], "brownian");
    assert_eq!(v["explicit"], false);
}

#[test]
fn solve_model_a_zero_q_is_explicit() {
    let dir = TempDir::new().unwrap();
    let m = model_a(&dir);
    let v = stdout_json(&run(&["solve", s(&m), "--q", "0"]));
    assert_valid("solve", &v);
    assert_eq!(v["iterations"], 0);
    assert_eq!(v["explicit"], true);
    assert!((v["pi"][0].as_f64().unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn solve_ladder_from_q_list() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        &dir,
        "ladder.json",
        &json!({ "sigma": 1.0, "drift": 1.0, "lambda": 1.0, "alpha": [1.0], "T": [[-0.5]], "q_list": [1.0, 0.1, 0.0] }),
    );
    let warm = stdout_json(&run(&["solve", s(&m), "--tol", "1e-12"]));
    let cold = stdout_json(&run(&["solve", s(&m), "--tol", "1e-12", "--no-warm-start"]));
    assert_valid("solve", &warm);
    assert_valid("solve", &cold);
    assert_eq!(warm["warm_start"], true);
    assert_eq!(cold["warm_start"], false);
    let ws = warm["solutions"].as_array().unwrap();
    let cs = cold["solutions"].as_array().unwrap();
    assert_eq!(ws.len(), 3);
    for (w, c) in ws.iter().zip(cs) {
        assert_eq!(w["q"], c["q"]);
        assert!((w["a"].as_f64().unwrap() - c["a"].as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn malformed_alpha_exits_2() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        &dir,
        "bad.json",
        &json!({ "sigma": 0.0, "drift": 2.0, "lambda": 1.0, "alpha": [0.7, 0.7], "T": [[-1.0, 0.0], [0.0, -1.0]] }),
    );
    let out = run(&["solve", s(&m), "--q", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "NotADistribution");
}

#[test]
fn unknown_field_and_missing_file_exit_2() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        &dir,
        "extra.json",
        &json!({ "sigma": 0.0, "drift": 2.0, "lambda": 1.0, "alpha": [1.0], "T": [[-1.0]], "mu": 3 }),
    );
    let out = run(&["solve", s(&m), "--q", "1"]);
    assert_eq!(out.status.code(), Some(2));
    stderr_json(&out);
    let out = run(&["solve", "/nonexistent/model.json", "--q", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "Io");
}

#[test]
fn eval_model_a_csv_round_trips() {
    let dir = TempDir::new().unwrap();
    let m = model_a(&dir);
    let out = run(&["eval", s(&m), "--q", "0", "--x-grid", "0:4:1"]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(reader.headers().unwrap(), vec!["x", "W_q"]);
    let mut n = 0;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.unwrap();
        let x: f64 = rec[0].parse().unwrap();
        let w: f64 = rec[1].parse().unwrap();
        assert_eq!(x, k as f64);
        assert!((w - (1.0 - 0.5 * (-0.5 * x).exp())).abs() < 1e-12);
        assert_eq!(format!("{w:.16e}"), &rec[1]);
        n += 1;
    }
    assert_eq!(n, 5);
}

#[test]
fn eval_both_methods_agree_on_coxian() {
    let dir = TempDir::new().unwrap();
    for sigma in [0.0, 1.0] {
        let m = coxian_model(&dir, 8, 11, sigma);
        let v = stdout_json(&run(&[
            "eval", s(&m), "--q", "1", "--x-grid", "0:10:0.05", "--method", "both", "--out", "json",
        ]));
        assert_valid("eval", &v);
        assert_eq!(v["rows"].as_array().unwrap().len(), 201);
        assert!(v["max_abs_err"].as_f64().unwrap() <= 1e-8, "sigma {sigma}: {}", v["max_abs_err"]);
    }
}

#[test]
fn eval_rejects_empty_grid() {
    let dir = TempDir::new().unwrap();
    let m = model_a(&dir);
    for grid in ["1:0:1", "0:1:0", "0:1", "a:b:c"] {
        let out = run(&["eval", s(&m), "--q", "0", "--x-grid", grid]);
        assert_eq!(out.status.code(), Some(2), "grid {grid}");
        stderr_json(&out);
    }
}

#[test]
fn spectrum_model_a_and_b() {
    let dir = TempDir::new().unwrap();
    let v = stdout_json(&run(&["spectrum", s(&model_a(&dir)), "--q", "1"]));
    assert_valid("spectrum", &v);
    let pairs = v["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 1);
    assert!((pairs[0]["zero"][0].as_f64().unwrap() + 0.5f64.sqrt()).abs() < 1e-10);
    assert!(pairs[0]["distance"].as_f64().unwrap() < 1e-10);

    let v = stdout_json(&run(&["spectrum", s(&model_b(&dir)), "--q", "1"]));
    assert_valid("spectrum", &v);
    let mut zeros: Vec<f64> = v["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["zero"][0].as_f64().unwrap())
        .collect();
    zeros.sort_by(f64::total_cmp);
    assert_eq!(zeros.len(), 2);
    assert!((zeros[0] + 1.0 + 3f64.sqrt()).abs() < 1e-9);
    assert!((zeros[1] + 1.0).abs() < 1e-9);
    assert_eq!(v["counts_match"], true);
}

#[test]
fn spectrum_reports_non_minimal_mixture() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        &dir,
        "mix.json",
        &json!({ "sigma": 0.0, "drift": 2.0, "lambda": 1.0, "alpha": [0.5, 0.5], "T": [[-1.0, 0.0], [0.0, -1.0]] }),
    );
    let v = stdout_json(&run(&["spectrum", s(&m), "--q", "1"]));
    assert_valid("spectrum", &v);
    assert_eq!(v["counts_match"], false);
    assert_eq!(v["unmatched"]["eigenvalues"].as_array().unwrap().len(), 1);
    assert_eq!(v["cancelled"].as_array().unwrap().len(), 1);
}

#[test]
fn simulate_hit_model_a() {
    let dir = TempDir::new().unwrap();
    let m = model_a(&dir);
    let v = stdout_json(&run(&[
        "simulate", s(&m), "--q", "1", "--what", "hit", "--x", "1", "--paths", "100000", "--seed", "5",
    ]));
    assert_valid("simulate", &v);
    let r = 0.5f64.sqrt();
    let analytic = (1.0 - r) / (1.0 + r) * (-r).exp();
    assert!((v["analytic"].as_f64().unwrap() - analytic).abs() < 1e-12);
    assert!(v["z_score"].as_f64().unwrap().abs() <= 3.0);
}

#[test]
fn simulate_exit_model_b() {
    let dir = TempDir::new().unwrap();
    let m = model_b(&dir);
    let v = stdout_json(&run(&[
        "simulate", s(&m), "--q", "1", "--what", "exit", "--x", "1", "--y", "1", "--paths", "4000", "--seed", "9",
    ]));
    assert_valid("simulate", &v);
    let se = v["estimate"]["stderr"].as_f64().unwrap();
    assert!(v["abs_diff"].as_f64().unwrap() <= (3.0 * se).max(0.01));
    assert_eq!(v["estimate"]["scheme"], "euler");
}

#[test]
fn simulate_is_deterministic_and_rejects_zero_paths() {
    let dir = TempDir::new().unwrap();
    let m = model_a(&dir);
    let args = ["simulate", s(&m), "--what", "workload", "--x", "1", "--paths", "2000", "--seed", "3"];
    let first = stdout_json(&run(&args));
    assert_valid("simulate", &first);
    assert_eq!(first["estimate"], stdout_json(&run(&args))["estimate"]);
    let out = run(&["simulate", s(&m), "--what", "hit", "--x", "1", "--paths", "0", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    stderr_json(&out);
}

fn strip_times(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_s");
            map.values_mut().for_each(strip_times);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_times),
        _ => {}
    }
}

fn csv_without_seconds(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let col = reader.headers().unwrap().iter().position(|h| h == "seconds").unwrap();
    reader
        .records()
        .map(|r| {
            r.unwrap()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != col)
                .map(|(_, f)| f.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn bench_outputs_are_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    let common = ["bench", "--n", "10", "--replications", "12", "--q", "1,0.1,0", "--seed", "42"];
    let mut a = stdout_json(
        &bin()
            .args(common)
            .args(["--out-dir", s(&one)])
            .env("LEVY_SCALE_THREADS", "1")
            .output()
            .unwrap(),
    );
    let mut b = stdout_json(
        &bin()
            .args(common)
            .args(["--out-dir", s(&many)])
            .env("LEVY_SCALE_THREADS", "3")
            .output()
            .unwrap(),
    );
    assert_valid("bench", &a);
    strip_times(&mut a);
    strip_times(&mut b);
    assert_eq!(a, b);
    assert_eq!(
        csv_without_seconds(&one.join("replications.csv")),
        csv_without_seconds(&many.join("replications.csv"))
    );
    let reps: Vec<usize> = csv_without_seconds(&one.join("replications.csv"))
        .iter()
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert!(reps.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(reps.len(), 36);
    for name in ["iterations_hist.csv", "rates_hist.csv"] {
        assert_eq!(
            std::fs::read(one.join(name)).unwrap(),
            std::fs::read(many.join(name)).unwrap()
        );
    }
}

#[test]
fn bench_histograms_count_iterative_cases() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let v = stdout_json(&run(&[
        "bench", "--n", "8", "--replications", "20", "--q", "0.5", "--seed", "7", "--out-dir", s(&out_dir),
    ]));
    let per_q = &v["per_q"][0];
    let iterative = per_q["cases"].as_u64().unwrap()
        - per_q["failures"].as_u64().unwrap()
        - per_q["explicit_cases"].as_u64().unwrap();
    let total = |name: &str| -> u64 {
        let mut r = csv::Reader::from_path(out_dir.join(name)).unwrap();
        r.records()
            .map(|rec| {
                let rec = rec.unwrap();
                rec[rec.len() - 1].parse::<u64>().unwrap()
            })
            .sum()
    };
    assert_eq!(total("iterations_hist.csv"), iterative);
    assert_eq!(total("rates_hist.csv"), iterative);
}

#[test]
fn bench_rejects_bad_parameters() {
    for extra in [
        vec!["--replications", "0"],
        vec!["--q=-1"],
        vec!["--pkill-max", "1.5"],
    ] {
        let out = bin().args(["bench", "--seed", "1", "--n", "4"]).args(&extra).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{extra:?}");
        stderr_json(&out);
    }
    let out = bin()
        .args(["bench", "--seed", "1", "--n", "4", "--replications", "2"])
        .env("LEVY_SCALE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_requires_seed() {
    let out = run(&["bench", "--n", "4", "--replications", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn critical_model_needs_q_epsilon() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        &dir,
        "critical.json",
        &json!({ "sigma": 0.5, "drift": 1.0, "lambda": 1.0, "alpha": [1.0], "T": [[-1.0]] }),
    );
    let out = run(&["solve", s(&m), "--q", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "AssumptionA1Violated");
    let v = stdout_json(&run(&["solve", s(&m), "--q", "0", "--q-epsilon", "1e-4", "--tol", "1e-12"]));
    assert_valid("solve", &v);
    assert_eq!(v["q"].as_f64().unwrap(), 1e-4);
    let v = stdout_json(&run(&["solve", s(&m), "--q", "1", "--q-epsilon", "1e-4"]));
    assert_eq!(v["q"].as_f64().unwrap(), 1.0);
    let out = run(&["solve", s(&m), "--q", "0", "--q-epsilon", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

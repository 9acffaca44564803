use ergorate::experiment::{DistanceKind, ExperimentConfig, RateModel, ReferenceSpec, TimeGrid};
use ergorate::processes::{Control, LevyMeasureSpec, PiecewiseOuSpec, ProcessKind, ProcessSpec, SigmaSpec};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("ergorate-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn ergorate(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergorate"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn chain_experiment() -> ExperimentConfig {
    ExperimentConfig {
        process: ProcessSpec::backward_recurrence(3.0, 5).unwrap(),
        x0: vec![0.0],
        t_grid: TimeGrid::Geometric { start: 1.0, end: 100.0, points: 10 },
        n_paths: 3000,
        seed: 17,
        distance: DistanceKind::W1d,
        p: 1.0,
        reference: ReferenceSpec::ExactInvariant,
        rate_model: RateModel::Polynomial,
        bracket: None,
        antithetic: false,
        fit_min_snr: None,
        out_dir: None,
    }
}

#[test]
fn run_is_reproducible_and_seed_flag_matters() {
    let dir = workdir("run");
    let cfg = write_config(&dir, &serde_json::to_value(chain_experiment()).unwrap());
    let a = ergorate("run", &cfg, &dir.join("a"), &["--threads", "2"]);
    let summary = stdout_json(&a);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.join("a/summary.json").exists());
    stdout_json(&ergorate("run", &cfg, &dir.join("b"), &[]));
    stdout_json(&ergorate("run", &cfg, &dir.join("c"), &["--seed", "18"]));
    let read = |s: &str| std::fs::read(dir.join(s).join("distances.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = workdir("invalid");
    let mut bad = chain_experiment();
    bad.n_paths = 1;
    let cfg = write_config(&dir, &serde_json::to_value(bad).unwrap());
    assert_eq!(ergorate("run", &cfg, &dir, &[]).status.code(), Some(2));
    assert_eq!(ergorate("run", &dir.join("missing.json"), &dir, &[]).status.code(), Some(2));
    let cfg = write_config(&dir, &json!({ "not": "a config" }));
    assert_eq!(ergorate("simulate", &cfg, &dir, &[]).status.code(), Some(2));
}

#[test]
fn degenerate_fit_exits_with_three() {
    let dir = workdir("degenerate");
    std::fs::write(dir.join("flat.csv"), "t,distance\n1,1\n2,0.9\n3,0.8\n4,0.75\n").unwrap();
    let cfg = write_config(&dir, &json!({ "input": "flat.csv", "model": "polynomial" }));
    assert_eq!(ergorate("ratefit", &cfg, &dir, &[]).status.code(), Some(3));
}

#[test]
fn ratefit_recovers_power_law() {
    let dir = workdir("ratefit");
    let mut csv = String::from("t,distance,exact\n");
    for k in 1..=10 {
        let t = k as f64;
        csv.push_str(&format!("{t},{},\n", 4.0 * t.powi(-2)));
    }
    std::fs::write(dir.join("d.csv"), csv).unwrap();
    let cfg = write_config(&dir, &json!({ "input": "d.csv", "model": "polynomial" }));
    let fit = stdout_json(&ergorate("ratefit", &cfg, &dir, &[]));
    assert!((fit["estimate"].as_f64().unwrap() + 2.0).abs() < 1e-10);
    assert!((fit["intercept"].as_f64().unwrap() - 4.0).abs() < 1e-9);
}

#[test]
fn simulate_writes_paths() {
    let dir = workdir("simulate");
    let cfg = write_config(
        &dir,
        &json!({
            "process": serde_json::to_value(ProcessSpec::backward_recurrence(3.0, 5).unwrap()).unwrap(),
            "x0": [0.0],
            "t_grid": { "kind": "explicit", "times": [0.0, 1.0, 5.0] },
            "n_paths": 4,
            "seed": 1,
        }),
    );
    let s = stdout_json(&ergorate("simulate", &cfg, &dir, &[]));
    assert_eq!(s["n_times"], 3);
    let csv = std::fs::read_to_string(dir.join("paths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    assert!(dir.join("paths.bin").exists());
}

#[test]
fn wdist_between_shifted_measures() {
    let dir = workdir("wdist");
    std::fs::write(dir.join("mu.csv"), "x1,weight\n0,1\n1,1\n").unwrap();
    std::fs::write(dir.join("nu.csv"), "x1,weight\n1,1\n2,1\n").unwrap();
    for method in [json!({ "kind": "w1d" }), json!({ "kind": "exact_lp" })] {
        let cfg = write_config(&dir, &json!({ "mu": "mu.csv", "nu": "nu.csv", "p": 2.0, "distance": method }));
        let s = stdout_json(&ergorate("wdist", &cfg, &dir, &[]));
        assert!((s["result"]["distance"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn subordinate_drift_only_is_exact() {
    let dir = workdir("subordinate");
    let cfg = write_config(
        &dir,
        &json!({
            "subordinator": { "kind": { "kind": "drift_only" }, "drift": 2.0 },
            "rate": { "kind": "exponential", "gamma": 1.0, "scale": 1.0 },
            "p": 1.0,
            "times": [0.5, 1.0],
            "n_mc": 100,
            "seed": 4,
        }),
    );
    let s = stdout_json(&ergorate("subordinate", &cfg, &dir, &[]));
    let v = s["rows"][1]["estimate"]["value"].as_f64().unwrap();
    assert!((v - (-2.0f64).exp()).abs() < 1e-12);
    assert!(dir.join("subordinate.csv").exists());
}

#[test]
fn lower_bound_curve_for_backward_chain() {
    let dir = workdir("lower");
    let cfg = write_config(
        &dir,
        &json!({
            "tail": { "kind": "backward_chain", "alpha": 3.0, "i0": 5 },
            "params": { "theta": 3.9, "vartheta": 2.9, "eps_var": 0.1, "eps_small": 0.2, "p": 1.0 },
            "x0": 0.0,
            "n_terms": 3,
            "s_grid": { "kind": "geometric", "start": 1e5, "end": 1e9, "points": 41 },
        }),
    );
    let s = stdout_json(&ergorate("lower", &cfg, &dir, &[]));
    assert_eq!(s["terms"], 3);
    let t: Vec<f64> = s["t"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(t.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn driftcheck_for_ou() {
    let dir = workdir("drift");
    let process = ProcessSpec::ou(
        DMatrix::from_element(1, 1, -1.0),
        LevyMeasureSpec::gaussian(DMatrix::from_element(1, 1, 1.0)),
    )
    .unwrap();
    let cfg = write_config(
        &dir,
        &json!({
            "process": serde_json::to_value(process).unwrap(),
            "lyapunov": { "kind": "poly_norm_plus_one", "q": [[1.0]], "theta": 2.0 },
            "phi": { "kind": "linear", "slope": 1.0 },
            "grid": { "lo": -10.0, "hi": 10.0, "points": 81 },
        }),
    );
    let s = stdout_json(&ergorate("driftcheck", &cfg, &dir, &[]));
    assert!(s["worst_margin"].as_f64().unwrap() >= -1e-9);
    assert!(s["ball_radius"].as_f64().unwrap() < 10.0);
}

#[test]
fn couple_piecewise_ou_with_envelope() {
    let dir = workdir("couple");
    let spec = PiecewiseOuSpec {
        l: vec![0.0],
        m: DMatrix::from_element(1, 1, 1.0),
        gamma: vec![1.0],
        control: Control::Constant { v: vec![1.0] },
        sigma: SigmaSpec::Constant { matrix: DMatrix::from_element(1, 1, 1.0) },
        levy: LevyMeasureSpec::none(),
    };
    let process = ProcessSpec::new(ProcessKind::PiecewiseOu(spec)).unwrap();
    let cfg = write_config(
        &dir,
        &json!({
            "process": serde_json::to_value(process).unwrap(),
            "x": [2.0],
            "y": [-1.0],
            "t_grid": { "kind": "arithmetic", "start": 0.0, "end": 2.0, "points": 5 },
            "n_paths": 200,
            "p": 2.0,
            "seed": 5,
            "envelope": { "kind": "piecewise_ou" },
        }),
    );
    let s = stdout_json(&ergorate("couple", &cfg, &dir, &[]));
    assert_eq!(s["violations"], 0);
    assert!(s["c_p"].as_f64().unwrap() > 0.0);
    assert!(dir.join("coupling.csv").exists());
}

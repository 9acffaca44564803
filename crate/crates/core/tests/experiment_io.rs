use ergorate::experiment::{
    run_experiment, DistanceKind, ExperimentConfig, RateModel, ReferenceSpec, TimeGrid,
};
use ergorate::processes::{BackwardRecurrence, LevyMeasureSpec, ProcessSpec};
use nalgebra::DMatrix;
use std::path::PathBuf;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ergorate-io-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn ou() -> ExperimentConfig {
    let h = DMatrix::from_element(1, 1, -0.5);
    let levy = LevyMeasureSpec::gaussian(DMatrix::from_element(1, 1, 1.0));
    ExperimentConfig {
        process: ProcessSpec::ou(h, levy).unwrap().with_max_step(1e-2).unwrap(),
        x0: vec![3.0],
        t_grid: TimeGrid::Geometric { start: 0.25, end: 6.0, points: 8 },
        n_paths: 3000,
        seed: 11,
        distance: DistanceKind::W1d,
        p: 2.0,
        reference: ReferenceSpec::ExactInvariant,
        rate_model: RateModel::Exponential,
        bracket: None,
        antithetic: true,
        fit_min_snr: None,
        out_dir: None,
    }
}

#[test]
fn outputs_round_trip_through_disk() {
    let dir = scratch("ou");
    let cfg = ou();
    let out = run_experiment(&cfg, &dir).unwrap();

    let csv = std::fs::read_to_string(dir.join("distances.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,distance,exact"));
    let parsed: Vec<(f64, f64, f64)> = lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect();
    assert_eq!(parsed.len(), out.rows.len());
    for (row, (t, d, e)) in out.rows.iter().zip(&parsed) {
        assert_eq!(row.t, *t);
        assert_eq!(row.distance, *d);
        assert_eq!(row.exact, Some(*e));
    }

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"].as_str(), Some(cfg.hash_hex().as_str()));
    // contraction rate of the drift −x/2 in W2
    let rate = summary["exact_fit"]["estimate"].as_f64().unwrap();
    assert!((rate - 0.5).abs() < 0.02, "exact-law rate {rate}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_hash_tracks_every_field() {
    let a = ou();
    let mut b = ou();
    b.seed += 1;
    let mut c = ou();
    c.antithetic = false;
    assert_eq!(a.hash_hex(), ou().hash_hex());
    assert_ne!(a.hash_hex(), b.hash_hex());
    assert_ne!(a.hash_hex(), c.hash_hex());
}

#[test]
fn short_grid_reports_degenerate_fit_but_keeps_rows() {
    let chain = BackwardRecurrence::new(3.0, 5).unwrap();
    let cfg = ExperimentConfig {
        process: ProcessSpec::backward_recurrence(chain.alpha, chain.i0).unwrap(),
        x0: vec![0.0],
        t_grid: TimeGrid::Explicit { times: vec![2.0, 3.0, 4.0] },
        n_paths: 500,
        seed: 3,
        distance: DistanceKind::W1d,
        p: 1.0,
        reference: ReferenceSpec::ExactInvariant,
        rate_model: RateModel::Polynomial,
        bracket: None,
        antithetic: false,
        fit_min_snr: None,
        out_dir: None,
    };
    let dir = scratch("short");
    let out = run_experiment(&cfg, &dir).unwrap();
    assert_eq!(out.rows.len(), 3);
    assert!(out.summary.fit.is_none());
    assert!(out.summary.fit_error.as_deref().unwrap().contains("degenerate"));
    assert!(dir.join("distances.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

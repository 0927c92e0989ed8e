//! End-to-end checks of the command-line surface: output formats, exit
//! codes, manifests and reproducibility.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdplp"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("mdplp_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn sweep_runs_are_identical_for_fixed_seed() {
    let run = || {
        let out = bin()
            .args([
                "scenario-sweep",
                "--problem",
                "fisheries",
                "--n",
                "2",
                "--N-grid",
                "10,40",
                "--trials",
                "3",
                "--seed",
                "21",
                "--quad-nodes",
                "24",
            ])
            .output()
            .expect("run");
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    assert!(first.starts_with("N,trials,failures"));
    assert_eq!(first.lines().count(), 3);
}

#[test]
fn bounds_json_has_expected_fields() {
    let out = bin()
        .args([
            "bounds",
            "--problem",
            "lqg",
            "--n",
            "4",
            "--theta-p",
            "150",
            "--epsilon",
            "0.5",
            "--beta",
            "0.1",
            "--route",
            "scenario",
        ])
        .output()
        .expect("run");
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "theta_P",
        "theta_D",
        "rho_n",
        "z_n",
        "N_required",
        "epsilon",
        "beta",
        "C1",
        "C2",
        "prox_c",
        "prox_C",
        "n_required",
        "composite_gap",
    ] {
        assert!(v.get(key).is_some(), "missing field {key}");
    }
    assert_eq!(v["theta_D"], 1.0);
    assert!(v.get("eta").is_none(), "scenario route must not carry eta");

    let out2 = bin()
        .args([
            "bounds",
            "--problem",
            "lqg",
            "--n",
            "4",
            "--theta-p",
            "150",
            "--epsilon",
            "0.5",
            "--beta",
            "0.1",
            "--route",
            "smoothing",
        ])
        .output()
        .expect("run");
    let v2: serde_json::Value = serde_json::from_slice(&out2.stdout).unwrap();
    assert!(v2.get("eta").is_some() && v2.get("k_required").is_some());
    assert!(v2.get("N_required").is_none());
}

#[test]
fn config_errors_exit_2() {
    let out = bin()
        .args(["scenario-sweep", "--problem", "unknown-problem"])
        .output()
        .expect("run");
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args([
            "smooth-trace",
            "--problem",
            "lqg",
            "--criterion",
            "dc",
            "--tau",
            "0.9",
            "--k-max",
            "5",
        ])
        .output()
        .expect("run");
    assert_eq!(
        out.status.code(),
        Some(2),
        "smoothing requires the average-cost criterion"
    );

    let out = bin()
        .args(["scenario-sweep", "--criterion", "dc"])
        .output()
        .expect("run");
    assert_eq!(out.status.code(), Some(2), "dc without tau");
}

#[test]
fn coarse_smoothing_epsilon_is_a_config_error() {
    // epsilon above C1 leaves the schedule undefined; surfaced as exit 2
    let out = bin()
        .args([
            "smooth-trace",
            "--problem",
            "lqg",
            "--n",
            "2",
            "--theta-p",
            "paper",
            "--epsilon",
            "999999999",
            "--k-max",
            "5",
            "--grid-nodes",
            "8",
        ])
        .output()
        .expect("run");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("exceeds C1"), "unexpected message: {err}");
}

#[test]
fn out_dir_receives_csv_and_manifest() {
    let dir = tmp_dir("outdir");
    let out = bin()
        .args([
            "scenario-sweep",
            "--problem",
            "fisheries",
            "--n",
            "2",
            "--N-grid",
            "15",
            "--trials",
            "2",
            "--seed",
            "4",
            "--quad-nodes",
            "24",
            "--out",
        ])
        .arg(&dir)
        .output()
        .expect("run");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("scenario_sweep.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["base_seed"], 4);
    assert!(manifest["version"].is_string());
    assert!(manifest["basis"]["amplitudes"].as_array().unwrap().len() == 2);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn validate_model_reports_fields() {
    let out = bin()
        .args([
            "validate-model",
            "--problem",
            "fisheries",
            "--probes",
            "40",
            "--seed",
            "2",
        ])
        .output()
        .expect("run");
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["max_mass_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["cost_negative"], false);
    assert_eq!(v["probes"], 40);
}

#[test]
fn smooth_trace_csv_shape() {
    let out = bin()
        .args([
            "smooth-trace",
            "--problem",
            "lqg",
            "--n",
            "2",
            "--theta-p",
            "paper",
            "--epsilon",
            "0.5",
            "--k-max",
            "10",
            "--grid-nodes",
            "32",
        ])
        .output()
        .expect("run");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,J_LB,J_UB,gap,grad_norm,prior_epsilon"
    );
    // k=10 with geometric recording gives rows 1..9 and 10
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 6);
        let gap: f64 = cols[3].parse().unwrap();
        assert!(gap >= -1e-9, "negative gap in {row}");
    }
}

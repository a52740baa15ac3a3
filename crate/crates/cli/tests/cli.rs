use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rampedgate"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RAMPEDGATE_LOG", "error")
        .output()
        .unwrap()
}

fn body(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect()
}

/// A two-by-two ramp grid that runs in seconds.
const SMALL_RAMP: &str = r#"{
  "sweeps": { "ramp_durations_s": [0.0, 50e-6], "ramp_nbar": [0.0, 1.0], "ramp_fock_dim": 16 }
}"#;

#[test]
fn spectrum_rows_follow_cutoff_and_carrier_vanishes_at_index_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "{}", &["spectrum", "--n-max", "7"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = body(&dir.path().join("out/spectrum.csv"));
    assert_eq!(data_rows(&text).len(), 15);

    let out = run(dir.path(), r#"{ "modulation_index": 0.0 }"#, &["spectrum"]);
    assert!(out.status.success());
    let text = body(&dir.path().join("out/spectrum.csv"));
    for row in data_rows(&text) {
        let f: Vec<&str> = row.split(',').collect();
        let w: f64 = f[2].parse().unwrap();
        assert_eq!(w != 0.0, f[0] == "0", "{row}");
    }
}

#[test]
fn default_spectrum_is_dominated_by_second_sideband() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), "{}", &["spectrum"]).status.success());
    let text = body(&dir.path().join("out/spectrum.csv"));
    let best = data_rows(&text)
        .into_iter()
        .map(|r| r.split(',').map(String::from).collect::<Vec<_>>())
        .filter(|f| f[3] == "S_z")
        .max_by(|a, b| {
            a[2].parse::<f64>()
                .unwrap()
                .abs()
                .total_cmp(&b[2].parse::<f64>().unwrap().abs())
        })
        .unwrap();
    assert_eq!(best[0].parse::<i32>().unwrap().abs(), 2);
}

#[test]
fn unknown_key_is_a_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        "{\n  \"delta_hz\": 894000.0,\n  \"bogus\": 1\n}",
        &["bell"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
}

#[test]
fn non_positive_frequency_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), r#"{ "delta_hz": -1.0 }"#, &["spectrum"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_grid_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        r#"{ "sweeps": { "ramp_nbar": [] } }"#,
        &["sweep-ramp"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_config_flag_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_rampedgate"))
        .arg("spectrum")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bell_reports_high_overlap_and_schedule_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "{}", &["bell"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_str(&body(&dir.path().join("out/bell.json"))).unwrap();
    assert!(v["result"]["fidelity_overlap"].as_f64().unwrap() > 0.999);
    assert_eq!(v["schedule_sha256"].as_str().unwrap().len(), 64);
    assert!(v["result"].get("wall_time_s").is_none());
    let meta: Value =
        serde_json::from_str(&body(&dir.path().join("out/bell.json.meta.json"))).unwrap();
    assert_eq!(meta["config_sha256"], v["config_sha256"]);
}

#[test]
fn shot_sampling_is_reproducible_for_a_seed() {
    let cfg = r#"{ "shots": { "bootstrap_resamples": 200 } }"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(a.path(), cfg, &["bell", "--seed", "11"])
        .status
        .success());
    assert!(run(b.path(), cfg, &["bell", "--seed", "11"])
        .status
        .success());
    let read = |d: &Path| body(&d.join("out/bell.json"));
    assert_eq!(read(a.path()), read(b.path()));
    let v: Value = serde_json::from_str(&read(a.path())).unwrap();
    assert!(v["sampled"]["ci_half_width"].as_f64().unwrap() > 0.0);
}

#[test]
fn echo_flag_changes_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{ "flat_top_s": 347e-6, "epsilon_hz": 500.0 }"#;
    assert!(run(dir.path(), cfg, &["bell"]).status.success());
    let echo: Value = serde_json::from_str(&body(&dir.path().join("out/bell.json"))).unwrap();
    assert!(run(dir.path(), cfg, &["bell", "--no-echo"])
        .status
        .success());
    let plain: Value = serde_json::from_str(&body(&dir.path().join("out/bell.json"))).unwrap();
    assert_ne!(echo["config_sha256"], plain["config_sha256"]);
    assert_ne!(
        echo["result"]["fidelity_overlap"],
        plain["result"]["fidelity_overlap"]
    );
}

#[test]
fn analytic_flags_integer_mu_as_closure() {
    // d_f = 150 kHz, d_n = 50 kHz: μ = 0.1 MHz · t_f is an integer at 300 μs.
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{ "far_detuning_hz": 150e3, "near_detuning_hz": 50e3, "analytic": { "arm_durations_s": [300e-6, 305e-6] } }"#;
    assert!(run(dir.path(), cfg, &["analytic"]).status.success());
    let text = body(&dir.path().join("out/analytic.csv"));
    let rows = data_rows(&text);
    assert!(rows[0].contains("closure point"), "{}", rows[0]);
    assert!(!rows[1].contains("closure point"), "{}", rows[1]);
}

#[test]
fn ramp_sweep_is_byte_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL_RAMP, &["sweep-ramp", "--jobs", "2"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = dir.path().join("out/sweep_ramp.csv");
    let first = body(&path);
    assert!(first.starts_with("# config_sha256: "));
    assert_eq!(data_rows(&first).len(), 4);
    assert!(data_rows(&first).iter().all(|r| r.contains(",ok,")));

    assert!(run(dir.path(), SMALL_RAMP, &["sweep-ramp"])
        .status
        .success());
    assert_eq!(body(&path), first);

    // Drop two rows and resume: only those are recomputed.
    let mut lines: Vec<&str> = first.lines().collect();
    lines.truncate(lines.len() - 2);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(run(dir.path(), SMALL_RAMP, &["sweep-ramp", "--resume"])
        .status
        .success());
    assert_eq!(body(&path), first);
    let meta: Value =
        serde_json::from_str(&body(&dir.path().join("out/sweep_ramp.csv.meta.json"))).unwrap();
    assert_eq!(meta["counts"]["reused"], 2);
    assert_eq!(meta["counts"]["computed"], 2);
}

#[test]
fn failed_rows_give_partial_exit_code() {
    // A 1 μs flat-top bracket cannot reach the target phase.
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{ "calibration": { "max_flat_top_s": 1e-6 }, "sweeps": { "ramp_durations_s": [50e-6], "ramp_nbar": [0.0] } }"#;
    let out = run(dir.path(), cfg, &["sweep-ramp"]);
    assert_eq!(out.status.code(), Some(4));
    let csv = body(&dir.path().join("out/sweep_ramp.csv"));
    assert_eq!(data_rows(&csv).len(), 1);
    assert!(csv.contains(",failed,"));
}

#[test]
fn detuning_grid_has_rows_per_config_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{ "sweeps": { "detuning_configs_s": [0.0, 50e-6], "detuning_reference": 1, "epsilon_units": [-1.0, 0.0, 1.0] } }"#;
    let out = run(dir.path(), cfg, &["sweep-detuning"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        data_rows(&body(&dir.path().join("out/sweep_detuning.csv"))).len(),
        6
    );
}

#[test]
fn schedule_export_covers_one_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{ "flat_top_s": 347e-6, "output": { "export_step_s": 1e-6 } }"#;
    assert!(run(dir.path(), cfg, &["schedule-export"]).status.success());
    let text = body(&dir.path().join("out/schedule.csv"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 528);
    let last: Vec<f64> = rows[rows.len() - 1]
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((last[0] - 527.0).abs() < 1e-9);
    let mid: Vec<f64> = rows[263].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(mid[1], 1.0);
    assert!((mid[6] - 15e3).abs() < 1e-6);

    let traj = body(&dir.path().join("out/trajectory.csv"));
    assert!(traj.lines().nth(1).unwrap().starts_with("t_s,re_xi_"));
    assert_eq!(data_rows(&traj).len(), 528);
}

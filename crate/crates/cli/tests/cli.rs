use std::path::PathBuf;
use std::process::{Command, Output};

use gcl_core::config::RunConfig;
use gcl_core::report::parse_flat_json;

fn gcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .env_remove("GCL_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gcl-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn validate_passes() {
    let out = gcl(&["validate", "--n-traj", "1000"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn exact_sideband_auto() {
    let out = gcl(&["exact", "--q", "1e8", "--kappa", "auto", "--lambda", "auto"]);
    assert!(out.status.success());
    let fields = parse_flat_json(&stdout(&out)).unwrap();
    let nbar = fields["nbar"].as_f64().unwrap();
    assert!((nbar / 1.6727e-4 - 1.0).abs() < 1e-3, "{nbar}");
    assert_eq!(fields["method"].as_str(), Some("exact-spectral"));
}

#[test]
fn exact_measurement_has_orders() {
    let out = gcl(&["exact", "--q", "1e8", "--method", "measurement"]);
    assert!(out.status.success());
    let fields = parse_flat_json(&stdout(&out)).unwrap();
    let exact = fields["nbar"].as_f64().unwrap();
    let second = fields["second_order_nbar"].as_f64().unwrap();
    let first = fields["first_order_nbar"].as_f64().unwrap();
    assert!((exact / 3.17779e-3 - 1.0).abs() < 1e-4);
    assert!((exact - second).abs() < (exact - first).abs());
}

#[test]
fn report_round_trips_to_config() {
    for method in ["sideband", "measurement"] {
        let out = gcl(&[
            "exact",
            "--q",
            "1e7",
            "--n-thermal",
            "50",
            "--method",
            method,
        ]);
        assert!(out.status.success());
        let first = stdout(&out);
        let cfg = RunConfig::from_report(&parse_flat_json(&first).unwrap()).unwrap();
        let path = scratch(&format!("roundtrip-{method}.conf"));
        std::fs::write(&path, cfg.to_config_string()).unwrap();
        let again = gcl(&["exact", "--config", path.to_str().unwrap()]);
        assert!(
            again.status.success(),
            "{}",
            String::from_utf8_lossy(&again.stderr)
        );
        let a = parse_flat_json(&first).unwrap();
        let b = parse_flat_json(&stdout(&again)).unwrap();
        let (x, y) = (a["nbar"].as_f64().unwrap(), b["nbar"].as_f64().unwrap());
        assert!((x / y - 1.0).abs() < 1e-12, "{method}: {x} vs {y}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let path = scratch("override.conf");
    std::fs::write(
        &path,
        "# test\nq = 1e8\ncontroller = measurement\nn_thermal = 10\n",
    )
    .unwrap();
    let base = gcl(&["exact", "--config", path.to_str().unwrap()]);
    let over = gcl(&[
        "exact",
        "--config",
        path.to_str().unwrap(),
        "--n-thermal",
        "100",
    ]);
    assert!(base.status.success() && over.status.success());
    let a = parse_flat_json(&stdout(&base)).unwrap()["nbar"]
        .as_f64()
        .unwrap();
    let b = parse_flat_json(&stdout(&over)).unwrap()["nbar"]
        .as_f64()
        .unwrap();
    assert!((b / 3.17779e-3 - 1.0).abs() < 1e-4);
    assert!(a < b);
}

#[test]
fn compare_reports_slopes() {
    let path = scratch("compare.csv");
    let out = gcl(&["compare", "--output", path.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let summary = std::fs::read_to_string(path.with_extension("json")).unwrap();
    let fields = parse_flat_json(&summary).unwrap();
    let sb = fields["slope_sb_exact"].as_f64().unwrap();
    let meas = fields["slope_meas_exact"].as_f64().unwrap();
    assert!((sb + 2.0 / 3.0).abs() < 0.05, "{sb}");
    assert!((meas + 0.5).abs() < 0.05, "{meas}");
}

#[test]
fn sweep_csv_and_json_agree() {
    let csv = gcl(&["sweep", "--q", "1e8", "--grid", "1e-4:1e-2:4"]);
    let json = gcl(&[
        "sweep",
        "--q",
        "1e8",
        "--grid",
        "1e-4:1e-2:4",
        "--format",
        "json",
    ]);
    assert!(csv.status.success() && json.status.success());
    let text = stdout(&csv);
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("omega,"));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate",
        "--q",
        "1e8",
        "--n-traj",
        "64",
        "--n-steps",
        "200",
        "--seed",
        "7",
    ];
    let a = gcl(&args);
    let b = gcl(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = gcl(&[
        "simulate",
        "--q",
        "1e8",
        "--n-traj",
        "64",
        "--n-steps",
        "200",
        "--seed",
        "8",
    ]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn seed_from_environment() {
    let args = [
        "simulate",
        "--q",
        "1e8",
        "--n-traj",
        "32",
        "--n-steps",
        "100",
    ];
    let env = Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .env("GCL_SEED", "11")
        .output()
        .unwrap();
    let flag = gcl(&[&args[..], &["--seed", "11"]].concat());
    assert_eq!(env.stdout, flag.stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .env("GCL_SEED", "eleven")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bad_input_exits_two() {
    for args in [
        vec!["exact", "--q", "abc"],
        vec!["exact", "--q", "1e8", "--gamma", "1e-8"],
        vec!["exact"],
        vec![
            "exact",
            "--q",
            "1e8",
            "--eta",
            "1.5",
            "--method",
            "measurement",
        ],
        vec!["sweep", "--q", "1e8", "--grid", "1:0.5:3"],
        vec!["frobnicate"],
        vec!["exact", "--config", "/nonexistent/gcl.conf"],
    ] {
        let out = gcl(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn compare_needs_enough_q_values() {
    let out = gcl(&["compare", "--q-grid", "1e6:1e7:3"]);
    assert_eq!(out.status.code(), Some(2));
}

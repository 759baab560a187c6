//! End-to-end checks of the `nvmux` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nvmux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvmux"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

const SMALL_SCAN: &str = "\
seed = 3

[probe]
theta1_deg = 70
phi1_deg = 0
theta2_deg = 75
phi2_deg = 20
dx_nm = -52
dy_nm = -96
dz_nm = 11
z1_nm = 47
c1 = 1.0
c2 = 1.0
eps1 = 0.8
eps2 = 0.8
zeta1 = 0.1
zeta2 = 0.1

[field]
kind = wire
direction = y
width_nm = 700
current_ma = 0.012
drive = ac
frequency_khz = 35.21143

[sequence]
tau_ns = 250
n_shots = 2000

[scan]
start_x_nm = -800
stop_x_nm = 800
pixels = 5
mode = both
";

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ini");
    let o = nvmux(&["scan", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.ini"), "{}", stderr(&o));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = nvmux(&["scan", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    fs::write(
        &cfg,
        SMALL_SCAN.replace("width_nm = 700", "width_nm = 700\nwidth_um = 1"),
    )
    .unwrap();
    let o = nvmux(&["scan", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.ini:23"), "{err}");
    assert!(err.contains("width_um"), "{err}");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.ini");
    fs::write(&cfg, SMALL_SCAN).unwrap();
    let run = |sub: &str, threads: &str| {
        let out = dir.path().join(sub);
        let o = nvmux(&[
            "scan",
            cfg.to_str().unwrap(),
            "--seed",
            "42",
            "--threads",
            threads,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (
            fs::read(out.join("scan_result.csv")).unwrap(),
            fs::read(out.join("cov_prediction.csv")).unwrap(),
        )
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_eq!(a, b);
    let header = String::from_utf8(a.0).unwrap();
    assert!(header.starts_with("x_nm,"), "{header}");
    assert_eq!(header.lines().count(), 6);
}

#[test]
fn dump_counts_writes_one_matrix_per_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.ini");
    fs::write(&cfg, SMALL_SCAN).unwrap();
    let out = dir.path().join("out");
    let o = nvmux(&[
        "scan",
        cfg.to_str().unwrap(),
        "--dump-counts",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..5 {
        let m = fs::read_to_string(out.join(format!("counts_matrix_{i:04}.csv"))).unwrap();
        assert_eq!(m.lines().count(), 17, "{m}");
    }
}

fn synth_edges(dir: &Path) -> (PathBuf, PathBuf) {
    let o = nvmux(&[
        "synth-edges",
        shipped("calibration_tip2.ini").to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    (dir.join("edge_scan_x.csv"), dir.join("edge_scan_y.csv"))
}

#[test]
fn calibrate_without_bootstrap_reports_no_sigmas() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = synth_edges(dir.path());
    let o = nvmux(&[
        "calibrate",
        shipped("calibration_tip2.ini").to_str().unwrap(),
        "--x-scan",
        x.to_str().unwrap(),
        "--y-scan",
        y.to_str().unwrap(),
        "--bootstrap",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("calibration_report.txt")).unwrap();
    assert!(!report.contains('±'), "{report}");
    assert!(report.contains("dz_nm = "), "{report}");
    assert!(dir.path().join("calibration_residuals.csv").exists());
}

#[test]
fn malformed_scan_row_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = synth_edges(dir.path());
    let text = fs::read_to_string(&x).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = "-570,abc,1,2,3".into();
    fs::write(&x, lines.join("\n")).unwrap();
    let o = nvmux(&[
        "calibrate",
        shipped("calibration_tip2.ini").to_str().unwrap(),
        "--x-scan",
        x.to_str().unwrap(),
        "--y-scan",
        y.to_str().unwrap(),
        "--bootstrap",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("edge_scan_x.csv") && err.contains("row 3"),
        "{err}"
    );
}

#[test]
fn odmr_resolves_four_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvmux(&[
        "odmr",
        shipped("odmr_tip2.ini").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let minima = out
        .lines()
        .find_map(|l| l.strip_prefix("minima (MHz): "))
        .expect("minima line");
    assert_eq!(minima.split(", ").count(), 4, "{out}");
    assert!(dir.path().join("odmr_spectrum.csv").exists());
}

#[test]
fn selftest_passes() {
    let o = nvmux(&["selftest", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn shipped_configs_parse() {
    for name in [
        "wire_covariance.ini",
        "phase_scan.ini",
        "calibration_tip2.ini",
        "odmr_tip2.ini",
    ] {
        nvmux::config::RunConfig::load(&shipped(name)).unwrap();
    }
}

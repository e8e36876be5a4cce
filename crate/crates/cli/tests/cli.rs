use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aerial_formation::scenario::{bundled, Scenario};

fn aeroform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeroform"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn write(dir: &Path, name: &str, s: &Scenario) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, s.to_toml_string().unwrap()).unwrap();
    path
}

fn bundled_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn run_then_plot_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let out = aeroform(&["run", &bundled_path("triangle"), "--out-dir", logs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for f in ["robots.csv", "uavs.csv", "monitor.csv", "events.csv", "summary.json"] {
        assert!(logs.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(logs.join("summary.json")).unwrap();
    assert!(summary.contains("\"converged\": true"));

    let figs = dir.path().join("figs");
    let out = aeroform(&["plot", logs.to_str().unwrap(), "--out-dir", figs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let svgs: Vec<_> = fs::read_dir(&figs)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 5);
    for e in svgs {
        let body = fs::read_to_string(e.path()).unwrap();
        assert!(body.starts_with("<svg") && body.contains("</svg>"), "{:?}", e.path());
    }
}

#[test]
fn run_short_horizon_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = aeroform(&[
        "run",
        &bundled_path("triangle"),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--max-time",
        "1",
        "--dt",
        "0.002",
        "--seed",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("not converged"));
}

#[test]
fn uncontrolled_robot_fails_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::from_toml_str(bundled::TRIANGLE).unwrap();
    s.uavs[0].controlled.retain(|id| *id != 6);
    let path = write(dir.path(), "bad.toml", &s);
    let out = aeroform(&["run", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("robot 6"), "{}", text(&out));
}

#[test]
fn malformed_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(&path, "name = \"broken\"\nmax_time = \n").unwrap();
    let out = aeroform(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("line"), "{}", text(&out));
    let out = aeroform(&["validate", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_single_camera_is_class_p() {
    let out = aeroform(&["validate", &bundled_path("triangle")]);
    assert_eq!(out.status.code(), Some(0));
    let t = text(&out);
    for n in 1..=5 {
        assert!(t.contains(&format!("TC{n}: ok")), "{t}");
    }
    assert!(t.contains("class: P"), "{t}");
}

#[test]
fn validate_reports_cycle_and_disconnection() {
    let dir = tempfile::tempdir().unwrap();
    let base = Scenario::from_toml_str(bundled::SWITCHING).unwrap();

    let mut cycle = base.clone();
    cycle.uavs[2].controlled = vec![6, 7, 8, 9, 10, 1, 2];
    let path = write(dir.path(), "cycle.toml", &cycle);
    let out = aeroform(&["validate", path.to_str().unwrap()]);
    let t = text(&out);
    assert!(t.contains("TC5: VIOLATED"), "{t}");
    assert!(t.contains("class: Q"), "{t}");
    assert_eq!(out.status.code(), Some(0));

    let mut split = base;
    split.switching = Default::default();
    split.uavs.truncate(2);
    split.uavs[0].controlled = vec![1, 2, 3, 4, 5];
    split.uavs[1].controlled = vec![6, 7, 8, 9, 10];
    let path = write(dir.path(), "split.toml", &split);
    let out = aeroform(&["validate", path.to_str().unwrap()]);
    let t = text(&out);
    assert!(t.contains("TC1: VIOLATED"), "{t}");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plot_needs_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = aeroform(&["plot", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("missing log"), "{}", text(&out));

    for f in ["robots.csv", "uavs.csv", "monitor.csv", "uav_monitor.csv", "image.csv"] {
        fs::write(dir.path().join(f), "step,time\n").unwrap();
    }
    let out = aeroform(&["plot", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("no rows"), "{}", text(&out));
}

#[test]
fn gradient_check_prints_small_error() {
    let out = aeroform(&["gradient-check", &bundled_path("star"), "--uav", "2", "--robot", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let t = text(&out);
    let line = t.lines().find(|l| l.starts_with("relative error")).unwrap();
    let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(value < 1e-4, "{t}");

    let out = aeroform(&["gradient-check", &bundled_path("star"), "--uav", "3", "--robot", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_verb_has_help() {
    for verb in ["run", "validate", "plot", "gradient-check"] {
        let out = aeroform(&[verb, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{verb}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

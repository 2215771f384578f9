use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn localparts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localparts"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

#[test]
fn timing_with_multiple_of_c() {
    let out = localparts(&["timing", "--v", "1e5c"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    let v_bb = v["v_bb"].as_f64().unwrap();
    assert!((v_bb - 2997.92458).abs() / v_bb < 1e-9);
}

#[test]
fn chain_local_bound() {
    let out = localparts(&["chain", "--n", "4", "--local-bound"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["local_bound"], json!(6.0));
}

#[test]
fn point_d_collinear_in_c_units() {
    let out = localparts(&["--c-units", "point-d", "--a", "0,0,0", "--b", "0,10,0", "--c", "0,20,0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["advantage"], json!(10.0));
}

#[test]
fn validate_reports_pointer_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let doc = json!({
        "schema": "localparts.scenario/1",
        "name": "bad",
        "trials": 0,
        "geometry": {"devices": [
            {"t": 0.0, "x": 0.0, "y": 0.0, "beta": 1.5},
            {"t": 0.0, "x": 10.0, "y": 0.0}
        ]}
    });
    fs::write(&path, doc.to_string()).unwrap();
    let out = localparts(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "schema");
    let paths: Vec<&str> = err["error"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["path"].as_str().unwrap())
        .collect();
    assert!(paths.contains(&"/trials"), "{paths:?}");
    assert!(paths.contains(&"/geometry/devices/0/beta"), "{paths:?}");
}

#[test]
fn minimal_scenario_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ok.json");
    let doc = json!({
        "schema": "localparts.scenario/1",
        "name": "ok",
        "geometry": {"devices": [{"t": 0, "x": 0, "y": 0}, {"t": 0, "x": 10, "y": 0}]},
        "state": "singlet",
        "settings": [[0.0, FRAC_PI_2], [FRAC_PI_4, -FRAC_PI_4]]
    });
    fs::write(&path, doc.to_string()).unwrap();
    let out = localparts(&["validate", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["valid"], json!(true));

    let out = localparts(&["simulate", "--scenario", path.to_str().unwrap(), "--trials", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn errors_and_exit_codes() {
    let out = localparts(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");

    let out = localparts(&["validate", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");

    let out = localparts(&["preset", "run", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preset_list_names_every_preset() {
    let out = localparts(&["preset", "list"]);
    assert!(out.status.success());
    let names: Vec<String> = stdout_json(&out)
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap().to_owned())
        .collect();
    for n in [
        "fig1-detection",
        "fig2a",
        "fig2b",
        "before-before",
        "finite-speed-1e5c",
        "mixture-chain",
    ] {
        assert!(names.iter().any(|m| m == n), "missing {n}");
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn preset_outputs_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["before-before", "fig2b"] {
        let mut runs = Vec::new();
        for workers in ["1", "4"] {
            let out_dir = dir.path().join(format!("{name}-{workers}"));
            let out = localparts(&[
                "--workers",
                workers,
                "preset",
                "run",
                name,
                "--trials",
                "150000",
                "--out",
                out_dir.to_str().unwrap(),
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            runs.push(read_all(&out_dir));
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{name}");
    }
}

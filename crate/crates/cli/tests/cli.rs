use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

fn detlab(args: &[&str], scenario_dir: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_detlab"));
    c.args(args).env_remove("DETLAB_SCENARIO_DIR");
    if let Some(d) = scenario_dir {
        c.env("DETLAB_SCENARIO_DIR", d);
    }
    c.output().expect("binary runs")
}

fn read_dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

const SMALL_PATHS: &str = r#"
name = "small_paths"
description = "Short path sample for tests"
seed = 5

[experiment]
kind = "sample-paths"
system = { type = "rotation", omega = 1.0 }
q_start = [1.0, 0.0]
q_end = [0.5403023058681398, -0.8414709848078965]
t_end = 1.0
n_slices = 16
n_samples = 600
sigma = 0.05
sigmas = [0.02, 0.05]
determinant_slices = 32
"#;

#[test]
fn three_state_clock_spectrum() {
    let out = tempfile::tempdir().unwrap();
    let o = detlab(&["run", "three_state_clock", "--out", out.path().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("three_state_clock/spectrum.csv")).unwrap();
    let mut phases: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    phases.sort_by(f64::total_cmp);
    for (p, e) in phases.iter().zip([-2.0 * PI / 3.0, 0.0, 2.0 * PI / 3.0]) {
        assert!((p - e).abs() < 1e-12, "{phases:?}");
    }
    assert!(out.path().join("three_state_clock/manifest.txt").exists());
}

#[test]
fn four_state_partition_and_quotient() {
    let out = tempfile::tempdir().unwrap();
    let o = detlab(&["run", "four_state_infoloss", "--out", out.path().to_str().unwrap()], None);
    assert!(o.status.success());
    let s = summary(&out.path().join("four_state_infoloss"));
    assert_eq!(s["results"]["classes"], serde_json::json!([[1, 4], [2], [3]]));
    assert_eq!(s["results"]["quotient_cycle_type"], serde_json::json!([3]));
    assert!(s["results"]["quotient_unitarity_defect"].as_f64().unwrap() < 1e-12);
}

#[test]
fn negative_sigma_fails_validation_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL_PATHS.replace("sigma = 0.05", "sigma = -0.05")).unwrap();
    let out = dir.path().join("out");
    let o = detlab(&["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma"));
    assert!(!out.exists());
    let o = detlab(&["validate", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_keys_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL_PATHS.replace("seed = 5", "seed = 5\ncolour = \"red\"")).unwrap();
    let o = detlab(&["validate", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn override_outside_range_fails_validation() {
    let out = tempfile::tempdir().unwrap();
    let o = detlab(&["run", "three_state_clock", "--tol", "0.5", "--out", out.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(std::fs::read_dir(out.path()).unwrap().next().is_none());
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("unreachable.toml");
    std::fs::write(&bad, SMALL_PATHS.replace("q_end = [0.5403023058681398, -0.8414709848078965]", "q_end = [0.0, 1.0]"))
        .unwrap();
    let out = dir.path().join("out");
    let o = detlab(&["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("small_paths").exists());
}

#[test]
fn listing_counts() {
    let listed = |d: Option<&Path>| {
        let o = detlab(&["list-scenarios"], d);
        assert!(o.status.success());
        String::from_utf8(o.stdout).unwrap().lines().map(String::from).collect::<Vec<_>>()
    };
    let bundled = listed(None);
    assert!(bundled.len() >= 6);
    let mut sorted = bundled.clone();
    sorted.sort();
    assert_eq!(sorted, bundled);
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(listed(Some(empty.path())), bundled);
    let one = tempfile::tempdir().unwrap();
    std::fs::write(one.path().join("small.toml"), SMALL_PATHS).unwrap();
    let with_one = listed(Some(one.path()));
    assert_eq!(with_one.len(), bundled.len() + 1);
    assert!(with_one.iter().any(|l| l.starts_with("small_paths")));
}

#[test]
fn custom_dir_scenarios_run_by_name() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL_PATHS).unwrap();
    let out = dir.path().join("out");
    let o = detlab(&["run", "small_paths", "--out", out.to_str().unwrap()], Some(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = read_dir_files(&out.join("small_paths"));
    for f in ["summary.json", "paths.csv", "moments.csv", "manifest.txt"] {
        assert!(files.contains_key(f), "{f} missing");
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_modes() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("small.toml");
    std::fs::write(&sc, SMALL_PATHS).unwrap();
    let run = |tag: &str, extra: &[&str]| {
        let out = dir.path().join(tag);
        let mut args = vec!["run", sc.to_str().unwrap(), "four_state_infoloss", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = detlab(&args, None);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut all = BTreeMap::new();
        for name in ["small_paths", "four_state_infoloss"] {
            for (f, body) in read_dir_files(&out.join(name)) {
                if f != "manifest.txt" {
                    all.insert(format!("{name}/{f}"), body);
                }
            }
        }
        all
    };
    let a = run("a", &[]);
    let b = run("b", &["--jobs", "2"]);
    let c = run("c", &["--sequential"]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    let d = run("d", &["--seed", "6"]);
    assert_ne!(a["small_paths/paths.csv"], d["small_paths/paths.csv"]);
}

#[test]
fn manifest_echoes_config_and_overrides() {
    let out = tempfile::tempdir().unwrap();
    let o = detlab(&["run", "rotation_flow", "--tol", "1e-9", "--seed", "42", "--out", out.path().to_str().unwrap()], None);
    assert!(o.status.success());
    let m = std::fs::read_to_string(out.path().join("rotation_flow/manifest.txt")).unwrap();
    assert!(m.contains("seed: 42"));
    assert!(m.contains("tol: 1e-9"));
    assert!(m.contains("trajectory.csv"));
    assert!(m.contains("kind = \"flow\""));
    assert!(m.contains("wall_time_s:"));
}

#[test]
fn every_bundled_scenario_validates() {
    let o = detlab(&["list-scenarios"], None);
    let names: Vec<String> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    let mut args = vec!["validate".to_string()];
    args.extend(names);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = detlab(&args, None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

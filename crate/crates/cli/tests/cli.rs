use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn carnot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carnot")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_config(dir: &tempfile::TempDir, body: &str) -> String {
    let path = dir.path().join("run.cfg");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const H1: &str = r#"
[[algebra]]
name = "H1"
layer_dims = [2, 1]
brackets = [{ i = 1, j = 2, k = 3, c = 1 }]

[[map]]
name = "x1"
source = "H1"
target = "R1"
components = ["u1"]
"#;

#[test]
fn bundled_heisenberg_config_checks_clean() {
    let out = carnot(&["algebra", "check", "--config", fixture("heisenberg1.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"][0]["name"], "H1");
    assert_eq!(v["result"][0]["valid"], true);
    for tag in ["convention", "g_convention", "omega_normalization", "seed", "tool_version"] {
        assert!(v.get(tag).is_some(), "{tag}");
    }
}

#[test]
fn undefined_algebra_is_a_config_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &H1.replace("source = \"H1\"", "source = \"H9\""));
    let out = carnot(&["algebra", "check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("H9") && err.contains("\"config\""), "{err}");
}

#[test]
fn nonzero_diagonal_bracket_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &H1.replace("brackets = [", "brackets = [{ i = 2, j = 2, k = 3, c = 1 }, "));
    let out = carnot(&["algebra", "check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("antisymmetry"));
}

#[test]
fn coarea_verify_balances_first_coordinate() {
    let out = carnot(&[
        "coarea",
        "verify",
        "--config",
        fixture("heisenberg1.cfg").to_str().unwrap(),
        "--map",
        "x1",
        "--convention",
        "balanced",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let ratio = v["result"][0]["ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() <= 0.01, "{ratio}");
    assert_eq!(v["result"][0]["balanced"], true);
}

#[test]
fn classify_zero_map_is_all_degenerate() {
    let out = carnot(&["classify", "--config", fixture("heisenberg1.cfg").to_str().unwrap(), "--map", "zero"]);
    assert_eq!(out.status.code(), Some(0));
    let census = &json(&out)["result"][0]["census"];
    assert!(census["nodes"].as_u64().unwrap() > 0);
    assert_eq!(census["degenerate"], census["nodes"]);
}

#[test]
fn narrow_radius_ladder_is_a_usage_error() {
    let out = carnot(&[
        "measure",
        "fit",
        "--config",
        fixture("heisenberg1.cfg").to_str().unwrap(),
        "--map",
        "x1",
        "--radii",
        "0.4,0.3,0.2,0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_and_bad_flags_exit_two() {
    assert_eq!(carnot(&["classify"]).status.code(), Some(2));
    assert_eq!(carnot(&["coarea", "verify", "--convention", "neither"]).status.code(), Some(2));
}

#[test]
fn non_contact_map_fails_with_a_diagnostic() {
    let out = carnot(&["classify", "--config", fixture("h2_to_h1.cfg").to_str().unwrap(), "--resolution", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not contact"));
}

#[test]
fn repeated_runs_write_identical_tables() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("heisenberg1.cfg");
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let out = carnot(&[
            "coarea",
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--map",
            "x2",
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let out = carnot(&["classify", "--config", cfg.to_str().unwrap(), "--map", "x3", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["coarea-x2-slices.csv", "classify-x3-characteristic.csv", "coarea-verify.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn triangle_probe_reports_its_seed() {
    let out = carnot(&[
        "probe",
        "triangle",
        "--algebra",
        fixture("engel.cfg").to_str().unwrap(),
        "--name",
        "Engel",
        "--r0",
        "1",
        "--samples",
        "2000",
        "--seed",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"][0]["seed"], 4);
    assert!(v["result"][0]["C_estimate"].as_f64().unwrap() >= 1.0);
}

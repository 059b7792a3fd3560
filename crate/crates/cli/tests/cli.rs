use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;
use serde_json::Value;
use srball::metric::{distance_shooting, ShootingOptions};
use srball::structure::StructureFile;
use srball::Structure;

fn srball(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srball"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--json")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let out = srball(dir.path(), args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn shoot_along_coordinate_directions() {
    let v = run_ok(&["shoot", "--structure", "example:1", "--xi", "1,0,0", "--t", "1"]);
    assert_close(&floats(&v["endpoint"]), &[1.0, 0.0, 0.0], 1e-9);
    let v = run_ok(&["shoot", "--structure", "example:1", "--xi", "0,1,0", "--t", "1"]);
    assert_close(&floats(&v["endpoint"]), &[0.0, 1.0, 0.0], 1e-9);
    assert_eq!(v["hamiltonian"], 0.5);
}

#[test]
fn shoot_writes_the_geodesic_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = srball(dir.path(), &["shoot", "--xi", "0.6,0.8,1", "--t", "2", "--m", "50"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("geodesic.csv")).unwrap();
    assert!(csv.starts_with("tau,x1,x2,x3,xi1,xi2,xi3,H\n"));
    assert_eq!(csv.lines().count(), 52);
    assert!(dir.path().join("shoot.json").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["shoot"],
        vec!["distance"],
        vec!["sphere", "--t", "0"],
        vec!["sphere", "--t=-1"],
        vec!["shoot", "--xi", "1,0"],
        vec!["shoot", "--xi", "1,x,0"],
        vec!["shoot", "--structure", "torus:2", "--xi", "1,0"],
        vec!["corank", "--const-u", "1,0,0"],
    ] {
        let out = srball(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numeric_failure_reports_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = srball(dir.path(), &["tangent", "--point", "1,0,0", "--t", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_parameter");
    assert!(err["message"].as_str().unwrap().contains("not on the sphere"));
}

#[test]
fn corank_of_the_example_family() {
    let c = |s: &str, u: &str| run_ok(&["corank", "--structure", s, "--const-u", u, "--t", "1"])["corank"].as_u64().unwrap();
    assert_eq!(c("example:1", "0,1"), 1);
    assert_eq!(c("example:2", "0,1"), 2);
    assert_eq!(c("flat:2", "1,0"), 1);
}

#[test]
fn corank_reads_a_control_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.csv");
    std::fs::write(&file, "# u1,u2\n0,1\n0,1\n0,1\n0,1\n").unwrap();
    let out = srball(dir.path(), &["corank", "--structure", "example:2", "--control-file", file.to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["corank"], 2);
    assert_eq!(v["m"], 4);
    assert!(dir.path().join("jacobian.csv").is_file());
}

#[test]
fn distance_by_both_methods() {
    let v = run_ok(&["distance", "--structure", "flat:2", "--to", "3,4"]);
    assert!((v["value"].as_f64().unwrap() - 5.0).abs() < 1e-6);
    let v = run_ok(&["distance", "--structure", "example:1", "--to", "1,0,0"]);
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() < 1e-4);
    assert!((v["transcription"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-4);
    assert_eq!(v["shooting"]["method"], "shooting");
}

#[test]
fn flat_sphere_is_the_unit_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = srball(dir.path(), &["sphere", "--structure", "flat:2", "--t", "1", "--count", "24"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sphere.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (x, y): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!((x.hypot(y) - 1.0).abs() < 1e-3);
        assert_eq!(f[4], "true");
        rows += 1;
    }
    assert_eq!(rows, 24);
    let svg = std::fs::read_to_string(dir.path().join("sphere.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 24);
}

#[test]
fn heisenberg_slice_is_mirror_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let out = srball(dir.path(), &["sphere", "--t", "1", "--count", "60", "--slice-axis", "2", "--slice-width", "0.15"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sphere.csv")).unwrap();
    let s = Structure::example(1).unwrap();
    let mut checked = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').take(6).map(|x| x.parse().unwrap()).collect();
        let minimal = line.ends_with("true");
        if !minimal || f[4].abs() > 0.15 {
            continue;
        }
        // (x1, x2, x3) -> (-x1, -x2, x3) is an isometry fixing the slice x2 = 0
        let mirror = DVector::from_row_slice(&[-f[3], -f[4], f[5]]);
        let d = distance_shooting(&s, s.q0(), &mirror, &ShootingOptions::default()).unwrap();
        assert!((d.value - 1.0).abs() < 1e-4, "{mirror:?}: {}", d.value);
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} slice points");
}

#[test]
fn tangent_confirmed_at_a_regular_point() {
    let v = run_ok(&["tangent", "--structure", "example:1", "--point", "1,0,0", "--t", "1"]);
    assert_eq!(v["verdict"], "tangent_confirmed");
    assert_eq!(v["report"]["violations"], 0);
    let normal = floats(&v["report"]["normal"]);
    assert!(normal[0] > 0.999, "{normal:?}");
}

#[test]
fn tangent_refuted_on_the_vertical_axis() {
    let t = std::f64::consts::PI.sqrt().to_string();
    let v = run_ok(&["tangent", "--structure", "example:1", "--point", "0,0,0.25", "--t", &t]);
    assert_eq!(v["verdict"], "tangent_refuted");
    assert_eq!(v["certificate"]["kind"], "multiplicity");
    assert!(v["certificate"]["max_angle"].as_f64().unwrap() > 0.1);
    assert!(v["multiplicity"].as_u64().unwrap() >= 2);
}

#[test]
fn tangent_surfaces_the_corank_signal() {
    let v = run_ok(&["tangent", "--structure", "example:2", "--point", "0,1,0", "--t", "1"]);
    assert_eq!(v["corank_signal"]["codimension"], 2);
    assert_eq!(v["candidate"]["kind"], "corank_signal");
    assert_eq!(v["verdict"], "inconclusive");
}

#[test]
fn goh_residuals() {
    let r = |s: &str, u: &str| run_ok(&["goh", "--structure", s, "--const-u", u])["residual"].as_f64().unwrap();
    assert!(r("example:2", "0,1") < 1e-8);
    assert!(r("example:1", "0,1") > 0.1);
    // the annihilating covector (1, 0) pairs to one with the field ∂1
    assert!((r("flat:2", "1,0") - 1.0).abs() < 1e-9);
}

#[test]
fn structure_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("heis.json");
    let text = StructureFile::from(&Structure::example(1).unwrap()).to_json().unwrap();
    std::fs::write(&file, text).unwrap();
    let out = srball(dir.path(), &["shoot", "--structure", file.to_str().unwrap(), "--xi", "1,0,0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_close(&floats(&v["endpoint"]), &[1.0, 0.0, 0.0], 1e-9);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sphere", "--t", "0.8", "--count", "8", "--seed", "11"];
    for dir in [&a, &b] {
        assert!(srball(dir.path(), &args).status.success());
        assert!(srball(dir.path(), &["distance", "--to", "0.3,-0.2,0.1", "--seed", "11"]).status.success());
    }
    for name in ["sphere.csv", "sphere.svg", "sphere.json", "distance.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

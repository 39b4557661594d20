//! End-to-end runs of the `ncthick` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncthick"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn thicken_flat_has_empty_higher_levels() {
    let out = run(&["thicken", "--spec", &data("flat2.json")]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["format"], 1);
    assert_eq!(v["truncation"], 4);
    for i in ["2", "3", "4"] {
        assert_eq!(v["nabla"][i], serde_json::json!({}));
    }
    assert_eq!(v["report"]["ok"], true);
}

#[test]
fn truncation_flag_overrides_the_file() {
    let v = json(&run(&["thicken", "--spec", &data("flat2.json"), "--truncation", "3"]));
    assert_eq!(v["truncation"], 3);
}

#[test]
fn bracket_of_coordinates() {
    let out = run(&["bracket", "x1", "x2", "--spec", &data("flat2.json")]);
    assert!(out.status.success());
    let expect: Value =
        serde_json::from_str(r#"{"format":1,"degree":2,"leading":"[e1,e2]","pbw":{"[12]":"1"}}"#).unwrap();
    assert_eq!(json(&out), expect);
}

#[test]
fn dims_on_two_variables() {
    let v = json(&run(&["dims", "--n", "2", "--max", "5"]));
    assert_eq!(v["dims"], serde_json::json!([1, 0, 1, 2, 4, 8]));
    assert_eq!(v["report"]["ok"], true);
}

#[test]
fn lift_mul_and_module() {
    let v = json(&run(&["lift", "x1", "--spec", &data("flat2.json")]));
    assert_eq!(v["report"]["ok"], true);
    assert_eq!(v["section"]["closed_through_degree"], 3);
    let out = run(&["mul", "x1^2", "x2", "--spec", &data("nonflat2.json")]);
    assert!(out.status.success());
    assert_eq!(json(&out)["report"]["degree2_law"], true);
    let out = run(&["module", "--spec", &data("module2.json")]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["report"]["ok"], true);
    assert_eq!(v["flat_basis"].as_array().unwrap().len(), 2);
}

#[test]
fn gauge_between_specs() {
    let out = run(&[
        "gauge",
        "--spec",
        &data("flat2.json"),
        "--other",
        &data("nonflat2.json"),
        "--truncation",
        "3",
    ]);
    assert!(out.status.success());
    assert_eq!(json(&out)["report"]["ok"], true);
}

#[test]
fn koszul_outputs_and_failures() {
    let out = run(&["koszul", "--spec", &data("exterior2.json")]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["presentation"]["quotient_dims"], serde_json::json!([1, 2, 3, 4, 5]));
    let out = run(&["koszul", "--spec", &data("bad_ainfinity.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["report"]["ok"], false);
}

#[test]
fn out_and_report_files() {
    let dir = std::env::temp_dir().join(format!("ncthick-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (out_path, report_path) = (dir.join("out.json"), dir.join("report.json"));
    let out = run(&[
        "verify",
        "--spec",
        &data("nonflat2.json"),
        "--out",
        out_path.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["ok"], true);
    assert_eq!(report["format"], 1);
    assert!(out_path.exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn parse_and_validation_errors_exit_two() {
    let dir = std::env::temp_dir().join(format!("ncthick-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let broken = dir.join("broken.json");
    std::fs::write(&broken, "{\"n\": 2,\n \"truncation\": }").unwrap();
    let out = run(&["verify", "--spec", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");

    let torsion = dir.join("torsion.json");
    std::fs::write(&torsion, r#"{"n":2,"truncation":3,"christoffel":{"1":{"1,2":"x1","2,1":"x2"}}}"#).unwrap();
    assert_eq!(run(&["thicken", "--spec", torsion.to_str().unwrap()]).status.code(), Some(2));

    let out = run(&["lift", "x1 +", "--spec", &data("flat2.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    std::fs::remove_dir_all(&dir).unwrap();
}

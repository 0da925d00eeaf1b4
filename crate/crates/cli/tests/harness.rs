use bjl_cli::plot::format_series;
use bjl_cli::scenario::{domain_hash, Bound, TOL_SCALE_VAR};
use bjl_cli::{emit_plot_data, run, run_scenario, DomainSpec, HarnessError, RunOptions, Scenario, Status};
use bjl_core::RadiusProfile;
use std::path::Path;
use std::process::Command;

fn scenario(text: &str) -> Scenario {
    Scenario::from_json(text).expect("valid scenario")
}

fn run_default(s: &Scenario) -> bjl_cli::Report {
    run(s, Path::new("."), &RunOptions::default()).expect("runs")
}

#[test]
fn empty_pipeline_passes() {
    let r = run_default(&scenario(r#"{"name": "empty", "pipeline": []}"#));
    assert!(r.passed);
    assert!(r.steps.is_empty());
    assert_eq!(r.exit_code(), 0);
}

#[test]
fn circle_suite_passes_with_named_checks() {
    let r = run_default(&scenario(r#"{"name": "c", "pipeline": [{"op": "circle_suite"}]}"#));
    assert!(r.passed);
    let names: Vec<_> = r.steps[0].checks.iter().map(|c| c.name.as_str()).collect();
    for n in ["circle_map", "circle_differential", "circle_generating_length", "circle_polygon_8"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
}

#[test]
fn impossible_tolerance_fails_and_names_the_operation() {
    let s = scenario(r#"{"name": "t", "pipeline": [{"op": "circle_suite"}], "tolerances": {"circle_polygon_3": 1e-300}}"#);
    let r = run_default(&s);
    assert!(!r.passed);
    assert_eq!(r.exit_code(), 1);
    assert_eq!(r.steps[0].status, Status::Fail);
    let f = &r.steps[0].failures;
    assert_eq!(f.len(), 1, "{f:?}");
    assert!(f[0].starts_with("circle_suite:") && f[0].contains("circle_polygon_3"), "{}", f[0]);
}

#[test]
fn tolerance_override_respects_bound_kind() {
    let s = scenario(r#"{"name": "t", "pipeline": [{"op": "area_twist", "params": {"points": 50}}], "tolerances": {"twist": 1e6}}"#);
    let r = run_default(&s);
    let twist = r.steps[0].checks.iter().find(|c| c.name == "twist").unwrap();
    assert_eq!(twist.bound, Bound::AtLeast(1e6));
    assert!(!twist.passed);
}

#[test]
fn reports_are_byte_identical() {
    let s = scenario(r#"{"name": "d", "seed": 7, "pipeline": [{"op": "area_twist", "params": {"points": 40}}, {"op": "jet_fd", "params": {"points": 1, "order": 2}}]}"#);
    assert_eq!(run_default(&s).to_json(), run_default(&s).to_json());
}

#[test]
fn seeds_change_sampled_points() {
    let a = scenario(r#"{"name": "d", "seed": 1, "pipeline": [{"op": "jet_fd", "params": {"points": 1, "order": 1}}]}"#);
    let b = scenario(r#"{"name": "d", "seed": 2, "pipeline": [{"op": "jet_fd", "params": {"points": 1, "order": 1}}]}"#);
    assert_ne!(run_default(&a).steps[0].values, run_default(&b).steps[0].values);
}

#[test]
fn tolerance_scale_moves_bounds() {
    let s = scenario(r#"{"name": "t", "pipeline": [{"op": "circle_suite"}], "tolerances": {"circle_polygon_3": 1e-300}}"#);
    let loose = RunOptions { tolerance_scale: 1e300, ..Default::default() };
    let r = run(&s, Path::new("."), &loose).unwrap();
    let c = r.steps[0].checks.iter().find(|c| c.name == "circle_polygon_3").unwrap();
    assert_eq!(c.bound, Bound::AtMost(1.0));
    assert_eq!(r.provenance.tolerance_scale, 1e300);
}

#[test]
fn bound_scaling_by_kind() {
    assert_eq!(Bound::AtMost(2.0).scaled(3.0), Bound::AtMost(6.0));
    assert_eq!(Bound::AtLeast(6.0).scaled(3.0), Bound::AtLeast(2.0));
    assert_eq!(Bound::Within(8.0, 12.0).scaled(2.0), Bound::Within(6.0, 14.0));
    assert!(Bound::Within(6.0, 14.0).holds(6.0) && !Bound::Within(6.0, 14.0).holds(14.5));
}

#[test]
fn unknown_operation_is_a_schema_error() {
    let err = Scenario::from_json(r#"{"name": "u", "pipeline": [{"op": "warp_drive"}]}"#).unwrap_err();
    assert!(matches!(err, HarnessError::Schema(ref m) if m.contains("warp_drive")), "{err}");
}

#[test]
fn unknown_fields_are_schema_errors() {
    assert!(matches!(Scenario::from_json(r#"{"name": "u", "pipeline": [], "extra": 1}"#), Err(HarnessError::Schema(_))));
    let s = scenario(r#"{"name": "u", "pipeline": [{"op": "circle_suite", "params": {"bogus": 1}}]}"#);
    assert!(matches!(run(&s, Path::new("."), &RunOptions::default()), Err(HarnessError::Schema(_))));
}

#[test]
fn nonpositive_tolerance_is_a_schema_error() {
    assert!(matches!(
        Scenario::from_json(r#"{"name": "u", "pipeline": [], "tolerances": {"circle_map": 0}}"#),
        Err(HarnessError::Schema(_))
    ));
}

#[test]
fn numeric_failure_is_recorded_as_step_error() {
    let s = scenario(r#"{"name": "g", "pipeline": [{"op": "orbit_jet", "params": {"phi": 0.0}}, {"op": "circle_suite"}]}"#);
    let r = run_default(&s);
    assert!(!r.passed);
    assert_eq!(r.steps[0].status, Status::Error);
    assert!(r.steps[0].failures[0].starts_with("orbit_jet:"));
    assert_eq!(r.steps[1].status, Status::Pass);
}

#[test]
fn provenance_hashes_the_domain() {
    let s = scenario(r#"{"name": "h", "domain": {"ellipse_like": 0.2}, "seed": 3, "pipeline": []}"#);
    let r = run_default(&s);
    assert_eq!(r.provenance.domain_hash.as_deref(), Some(domain_hash(&RadiusProfile::ellipse_like(0.2)).as_str()));
    assert_eq!(r.provenance.seed, 3);
    assert_ne!(domain_hash(&RadiusProfile::ellipse_like(0.2)), domain_hash(&RadiusProfile::ellipse_like(0.21)));
}

#[test]
fn domain_files_resolve_relative_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("shape.json"), RadiusProfile::ellipse_like(0.1).to_json()).unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"name": "f", "domain": {"file": "shape.json"}, "pipeline": [{"op": "admissibility"}]}"#,
    )
    .unwrap();
    let r = run_scenario(&dir.path().join("s.json"), &RunOptions::default()).unwrap();
    assert!(r.passed);
    let spec: DomainSpec = serde_json::from_str(r#"{"harmonics": [[2, 0.1, 0.0]]}"#).unwrap();
    assert!(spec.load(Path::new(".")).is_ok());
}

#[test]
fn artifacts_and_report_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(r#"{"name": "a", "pipeline": [{"op": "lazutkin"}]}"#);
    let opts = RunOptions { output_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let r = run(&s, Path::new("."), &opts).unwrap();
    assert_eq!(r.steps[0].artifacts, vec!["00_lazutkin_r1.dat", "00_lazutkin_r2.dat"]);
    for a in &r.steps[0].artifacts {
        let text = std::fs::read_to_string(dir.path().join(a)).unwrap();
        assert!(text.lines().all(|l| l.split(' ').count() == 2));
    }
    let saved = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(saved, r.to_json());
}

#[test]
fn plot_data_format() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.dat");
    emit_plot_data(&[], &empty).unwrap();
    assert_eq!(std::fs::read(&empty).unwrap().len(), 0);
    let text = format_series(&[(0.1, -1.0 / 3.0)]).unwrap();
    assert_eq!(text, "1.0000000000000001e-1 -3.3333333333333331e-1\n");
    let back: Vec<f64> = text.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(back, vec![0.1, -1.0 / 3.0]);
    assert!(format_series(&[(0.0, f64::NAN)]).is_err());
}

fn bjl() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bjl"));
    c.env_remove(TOL_SCALE_VAR);
    c
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok.json");
    std::fs::write(&ok, r#"{"name": "ok", "pipeline": [{"op": "circle_suite"}]}"#).unwrap();
    let bad_tol = dir.path().join("tight.json");
    std::fs::write(&bad_tol, r#"{"name": "t", "pipeline": [{"op": "circle_suite"}], "tolerances": {"circle_polygon_2": 1e-300}}"#).unwrap();
    let bad_op = dir.path().join("op.json");
    std::fs::write(&bad_op, r#"{"name": "o", "pipeline": [{"op": "nope"}]}"#).unwrap();

    let out = bjl().arg("run").arg(&ok).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let out = bjl().arg("run").arg(&bad_tol).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("circle_polygon_2"));

    assert_eq!(bjl().arg("run").arg(&bad_op).output().unwrap().status.code(), Some(2));
    assert_eq!(bjl().arg("frobnicate").output().unwrap().status.code(), Some(2));
    assert_eq!(bjl().arg("run").arg(&ok).env(TOL_SCALE_VAR, "-1").output().unwrap().status.code(), Some(2));
}

#[test]
fn cli_tolerance_scale_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let tight = dir.path().join("tight.json");
    std::fs::write(&tight, r#"{"name": "t", "pipeline": [{"op": "circle_suite"}], "tolerances": {"circle_polygon_2": 1e-300}}"#).unwrap();
    let out = bjl().arg("run").arg(&tight).env(TOL_SCALE_VAR, "1e300").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cli_subcommands_report_json() {
    let out = bjl().args(["orbit", "find", "ellipse:0.2", "--q", "2", "--seed", "0.25"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let lambda = r["steps"][0]["values"]["lambda"].as_f64().unwrap();
    assert!(lambda > 1.0);

    let out = bjl().args(["domain", "check", "circle"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    let out = bjl().args(["orbit", "jet", "circle", "--s", "0.1", "--phi", "1.0", "--order", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    let out = bjl().args(["domain", "check", "ellipse:oops"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

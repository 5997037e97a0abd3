use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name)
}

fn wfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn single_task_on_star_takes_one_second() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = wfsim(&[
        "run",
        "--topology",
        s(&scenario("star_topology.json")),
        "--workflows",
        s(&scenario("single_task_workflows.json")),
        "--config",
        s(&scenario("default_config.json")),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["workflows"][0]["makespan"], 1.0);
}

#[test]
fn repeated_runs_write_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for i in 0..2 {
        let trace = dir.path().join(format!("trace{i}.csv"));
        let out = wfsim(&[
            "run",
            "--topology",
            s(&scenario("linear_topology.json")),
            "--workflows",
            s(&scenario("montage_workflows.json")),
            "--config",
            s(&scenario("montage_config.json")),
            "--trace",
            s(&trace),
            "--report",
            s(&dir.path().join("r.json")),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        traces.push(fs::read(&trace).unwrap());
    }
    assert!(!traces[0].is_empty());
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn cyclic_workflow_fails_without_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("cyclic.json");
    fs::write(
        &wf,
        r#"{"workflows": [{"workflow_id": "loop", "tasks": [
            {"id": 0, "runtime": 1, "parents": [1]},
            {"id": 1, "runtime": 1, "parents": [0]}
        ]}]}"#,
    )
    .unwrap();
    let trace = dir.path().join("trace.csv");
    let out = wfsim(&[
        "run",
        "--topology",
        s(&scenario("star_topology.json")),
        "--workflows",
        s(&wf),
        "--config",
        s(&scenario("default_config.json")),
        "--trace",
        s(&trace),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("CycleDetected"));
    assert!(!trace.exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let trace = dir.path().join(name);
        let out = wfsim(&[
            "--seed",
            seed,
            "run",
            "--scenario",
            "montage",
            "--trace",
            s(&trace),
            "--report",
            s(&dir.path().join("r.json")),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(trace).unwrap()
    };
    let a = run("42", "a.csv");
    let b = run("42", "b.csv");
    assert_eq!(a, b);
    let differs = (0..20).any(|seed| run(&seed.to_string(), "c.csv") != a);
    assert!(differs, "the seed flag had no effect on selectivity");
}

#[test]
fn validate_reports_each_document() {
    let ok = wfsim(&[
        "validate",
        s(&scenario("example_workflows.json")),
        s(&scenario("example_topology.json")),
        s(&scenario("default_config.json")),
    ]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("(workflows)") && stdout.contains("(topology)") && stdout.contains("(config)"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"fog_devices": [{"id": 0, "neighbors": [3]}]}"#).unwrap();
    let out = wfsim(&["validate", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SchemaError"));
}

#[test]
fn import_dax_prints_a_workflow_document() {
    let dir = tempfile::tempdir().unwrap();
    let dax = dir.path().join("w.dax");
    fs::write(
        &dax,
        r#"<adag name="w"><job id="a" runtime="2.0"/><job id="b" runtime="1"/><child ref="b"><parent ref="a"/></child></adag>"#,
    )
    .unwrap();
    let out = wfsim(&["import-dax", s(&dax), "--ref-mips", "500"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["workflows"][0]["tasks"][0]["runtime"], 1000.0);
    assert_eq!(json["workflows"][0]["tasks"][1]["parents"][0], 0);
}

#[test]
fn missing_arguments_are_a_usage_error() {
    let out = wfsim(&["run", "--topology", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}

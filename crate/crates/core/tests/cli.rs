use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stopfinder"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn stopfinder")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let o = run(&[flag]);
        assert_eq!(o.status.code(), Some(0), "{flag}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frobnicate"));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&["simulate", "--config", "/no/such/config.json", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/config.json"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn failed_runs_leave_no_output_behind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"master_seed": 1, "nonsense": true}"#).unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json"));
    let left: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(left, ["bad.json"]);

    // An existing output is not clobbered by a failing run.
    std::fs::write(&out, "keep").unwrap();
    let o = run(&["report", "--trials", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "keep");
}

#[test]
fn audit_prints_summary_and_writes_errors() {
    let dir = tempfile::tempdir().unwrap();
    let errors = dir.path().join("errors.csv");
    let o = run(&[
        "audit",
        "--stops",
        s(&data("stops.txt")),
        "--truth",
        s(&data("ground_truth.csv")),
        "--out",
        s(&errors),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["matched"], 174);
    let f = summary["fraction_exceeding"][0]["fraction"].as_f64().unwrap();
    assert!((f - 40.0 / 174.0).abs() < 1e-12);
    let text = std::fs::read_to_string(&errors).unwrap();
    assert!(text.starts_with("stop_id,error_m\n"));
    assert_eq!(text.lines().count(), 175);
}

#[test]
fn audit_rejects_bad_bus_length() {
    let o = run(&[
        "audit",
        "--stops",
        s(&data("stops.txt")),
        "--truth",
        s(&data("ground_truth.csv")),
        "--bus-length-m",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run(&["default-config", "--out", s(&cfg)]).status.code(), Some(0));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(out), "--master-seed", "11"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    assert_eq!(String::from_utf8_lossy(&ta).lines().count(), 1 + 2 * 432);

    let o = run(&[
        "report",
        "--trials",
        s(&a),
        "--format",
        "json",
        "--bootstrap-resamples",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["total_trials"], 432);

    let o = run(&[
        "report",
        "--trials",
        s(&a),
        "--format",
        "csv",
        "--bootstrap-resamples",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("record,"));
}

#[test]
fn replay_writes_a_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("timeline.csv");
    let o = run(&[
        "replay",
        "--log",
        s(&data("frames.csv")),
        "--guidance-config",
        s(&data("guidance.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("frame_index,state,event_kind,level,est_distance_m\n"));
    assert!(text.contains(",Locked,CONTINUOUS,4,"));
}

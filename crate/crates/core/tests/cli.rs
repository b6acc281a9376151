use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn edspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edspec"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("spawn edspec")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const MY1960_FILE: &str = r#"{
  "type": "linear",
  "dim": 2,
  "label": "my1960 from file",
  "entries": [
    ["-1+1.5*cos(t)^2", "1-1.5*cos(t)*sin(t)"],
    ["-1-1.5*cos(t)*sin(t)", "-1+1.5*sin(t)^2"]
  ]
}"#;

#[test]
fn examples_lists_builtins() {
    let out = edspec(&["examples"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 6);
    for name in ["my1960", "triangular_demo", "cg_field", "cg_reduced"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn spectrum_of_my1960() {
    let out = edspec(&["spectrum", "my1960", "--format", "json", "--no-timestamp"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["command"], "spectrum");
    assert!(v.get("timestamp").is_none());
    let intervals = v["result"]["intervals"].as_array().unwrap();
    assert_eq!(intervals.len(), 2);
    for (iv, expected) in intervals.iter().zip([-1.0, 0.5]) {
        for end in iv.as_array().unwrap() {
            assert!((end.as_f64().unwrap() - expected).abs() <= 0.05, "{iv}");
        }
    }
}

#[test]
fn json_is_byte_identical_without_timestamp() {
    let args = [
        "spectrum",
        "scalar_decay",
        "--param",
        "lambda=-0.5",
        "--format",
        "json",
        "--no-timestamp",
    ];
    let (a, b) = (edspec(&args), edspec(&args));
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);

    let stamped = edspec(&["dichotomy", "scalar_decay", "--format", "json"]);
    assert!(json(&stamped)["timestamp"].is_u64());
}

#[test]
fn dichotomy_certificate_fields() {
    let out = edspec(&[
        "dichotomy",
        "scalar_decay",
        "--gamma",
        "0",
        "--format",
        "json",
        "--no-timestamp",
    ]);
    assert_eq!(code(&out), 0);
    let r = &json(&out)["result"];
    assert_eq!(r["verdict"], "certified");
    assert_eq!(r["rank"], 1);
    assert!(r["K"].as_f64().unwrap() >= 1.0);
    assert!(r["alpha"].as_f64().unwrap() > 0.5);
    for key in ["projector", "horizon", "residual"] {
        assert!(r.get(key).is_some(), "{key} missing");
    }

    let unstable = edspec(&[
        "dichotomy",
        "scalar_decay",
        "--gamma",
        "-2",
        "--format",
        "json",
        "--no-timestamp",
    ]);
    assert_eq!(json(&unstable)["result"]["rank"], 0);
}

#[test]
fn file_system_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "my1960.json", MY1960_FILE);
    let from_file = edspec(&[
        "dichotomy",
        "--file",
        &path,
        "--gamma",
        "2",
        "--format",
        "json",
        "--no-timestamp",
    ]);
    let builtin = edspec(&[
        "dichotomy",
        "my1960",
        "--gamma",
        "2",
        "--format",
        "json",
        "--no-timestamp",
    ]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(json(&from_file)["result"], json(&builtin)["result"]);
}

#[test]
fn simulate_writes_csv_with_header() {
    let out = edspec(&[
        "simulate",
        "my1960",
        "--x0",
        "1,0",
        "--T",
        "1",
        "--samples",
        "4",
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0);
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(reader.headers().unwrap(), vec!["t", "x1", "x2"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][0], "0");
    assert_eq!(rows[4][0].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn simulate_reports_escape() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "blow.json",
        r#"{"type":"nonlinear","dim":1,"rhs":["x1^2"]}"#,
    );
    let out = edspec(&[
        "simulate",
        "--file",
        &path,
        "--x0",
        "1",
        "--T",
        "2",
        "--samples",
        "4",
        "--format",
        "json",
        "--no-timestamp",
    ]);
    assert_eq!(code(&out), 0);
    let r = &json(&out)["result"];
    assert_eq!(r["escaped"], true);
    assert!((r["escape_time"].as_f64().unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("cert.json");
    let out = edspec(&[
        "dichotomy",
        "scalar_decay",
        "--format",
        "json",
        "--no-timestamp",
        "--output",
        target.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(written["command"], "dichotomy");
}

#[test]
fn nmyc_check_reports_hypotheses_and_stability() {
    let out = edspec(&[
        "nmyc-check",
        "triangular_demo",
        "--paths",
        "2",
        "--format",
        "json",
        "--no-timestamp",
    ]);
    assert_eq!(code(&out), 0);
    let r = &json(&out)["result"];
    assert!(r.get("hypotheses").is_some() && r.get("stability").is_some());
}

#[test]
fn experiment_prints_expected_and_measured() {
    let out = edspec(&["experiment", "shift-law", "--format", "text"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("expected") && text.contains("measured"));
    assert!(text.lines().any(|l| l.ends_with("0 failed")));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["bogus"][..],
        &["simulate", "my1960", "--T", "1"],
        &["spectrum", "my1960", "--horizon", "0"],
        &["dichotomy", "my1960", "--format", "csv"],
        &["experiment", "no-such-experiment"],
    ] {
        let out = edspec(args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn input_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mismatch = write(
        dir.path(),
        "mismatch.json",
        r#"{"type":"linear","dim":2,"entries":[["1","0"],["0","1"],["0","0"]]}"#,
    );
    let unknown_fn = write(
        dir.path(),
        "fn.json",
        r#"{"type":"nonlinear","dim":1,"rhs":["log(x1)"]}"#,
    );
    let missing = dir.path().join("absent.json");
    for args in [
        vec!["spectrum", "nope"],
        vec!["spectrum", "--file", &mismatch],
        vec!["simulate", "--file", &unknown_fn, "--x0", "1", "--T", "1"],
        vec!["dichotomy", "--file", missing.to_str().unwrap()],
    ] {
        let out = edspec(&args);
        assert_eq!(
            code(&out),
            3,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn numerical_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let singular = write(
        dir.path(),
        "pole.json",
        r#"{"type":"nonlinear","dim":1,"rhs":["1/(t-0.5)"]}"#,
    );
    let domain = write(
        dir.path(),
        "sqrt.json",
        r#"{"type":"nonlinear","dim":1,"rhs":["sqrt(x1-2)"]}"#,
    );
    for path in [&singular, &domain] {
        let out = edspec(&["simulate", "--file", path, "--x0", "1", "--T", "1"]);
        assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn failed_experiment_checks_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "unstable.json",
        r#"{"type":"nonlinear","dim":2,"rhs":["0.5*x1","-x2"]}"#,
    );
    let out = edspec(&[
        "experiment",
        "triangular",
        "--file",
        &path,
        "--paths",
        "3",
        "--format",
        "text",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}

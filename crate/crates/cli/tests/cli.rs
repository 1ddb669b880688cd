use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = "\
seed = 4
metrics = flr, call
configs = k_to_1(2)
frame_sizes = 64
load_ladder = 0.5, 1
duration = 1000000
formats = jsonl
system {
    ports = 3
    rate = 155520000
    buffer = 16
}
";

fn cellbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellbench"))
        .args(args)
        .output()
        .unwrap()
}

fn write_spec(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_prints_canonical_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "s.spec", SPEC);
    let out = cellbench(&["validate", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("repetitions = 1\n"));
    assert!(text.contains("load_ladder = 0.5, 1\n"));
}

#[test]
fn spec_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "bad.spec",
        "seed = 1\nframe_sizes = 0\nsystem {\nports = 2\nrate = 1000000\n}\n",
    );
    let out = cellbench(&["validate", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2: frame_sizes"), "{err}");

    let missing = dir.path().join("nope.spec");
    assert_eq!(
        cellbench(&["run", "--spec", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );
    assert_eq!(cellbench(&["run"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "s.spec",
        "seed = 1\nmetrics = latency\nframe_sizes = 64\np = 4\nsystem {\nports = 4\nrate = 155520000\n}\n\
         background {\nconfig = straight\nclass = cbr\nrate = 400000000\n}\n",
    );
    let out_dir = dir.path().join("out");
    let out = cellbench(&["run", "--spec", &spec, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("latency 64 octets rep 0"));
}

#[test]
fn run_then_derive_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "s.spec", SPEC);
    let out_dir = dir.path().join("out");
    let out = cellbench(&[
        "run",
        "--spec",
        &spec,
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "jsonl,csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for ext in ["jsonl", "csv"] {
        let report = out_dir.join(format!("report.{ext}"));
        let d = cellbench(&["derive", report.to_str().unwrap(), "--format", "csv"]);
        assert_eq!(d.status.code(), Some(0), "{}", String::from_utf8_lossy(&d.stderr));
        assert!(String::from_utf8(d.stdout).unwrap().contains("aggregate,"));
    }
    assert!(!out_dir.join("report.txt").exists());

    // a tampered aggregate is caught
    let path = out_dir.join("report.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replace(
        "\"metric\":\"flr\",\"suite\":\"throughput\",\"config\":\"k_to_1(2)\",\"frame_size\":64,\"value\":",
        "\"metric\":\"flr\",\"suite\":\"throughput\",\"config\":\"k_to_1(2)\",\"frame_size\":64,\"value\":1e-9,\"x\":",
    );
    assert_ne!(tampered, text);
    fs::write(&path, tampered).unwrap();
    assert_eq!(cellbench(&["derive", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn seed_and_repetition_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "s.spec", SPEC);
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = cellbench(&[
            "run",
            "--spec",
            &spec,
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
            "--repetitions",
            "2",
        ]);
        assert_eq!(out.status.code(), Some(0));
        fs::read(out_dir.join("report.jsonl")).unwrap()
    };
    let a = run("9", "a");
    assert_eq!(a, run("9", "b"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("seed = 9\\nmetrics"));
    assert!(text.contains("repetitions = 2\\n"));
    assert_eq!(text.matches("\"record\":\"run\"").count(), 2 * 2 + 2);
}

#[test]
fn violated_bounds_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "s.spec", &format!("{SPEC}expect {{\n    flr <= 0.1\n}}\n"));
    let out_dir = dir.path().join("out");
    let out = cellbench(&["run", "--spec", &spec, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("expectation failed: flr k_to_1(2)"));
    assert!(out_dir.join("report.jsonl").exists());
}

#[test]
fn trace_writes_cell_records() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "s.spec", SPEC);
    let path = dir.path().join("t.tsv");
    let out = cellbench(&[
        "trace",
        "--spec",
        &spec,
        "--load",
        "0.5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let records = cellbench::sim::read_records(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    assert!(!records.is_empty());
}

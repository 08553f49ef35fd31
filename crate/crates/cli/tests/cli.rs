use std::path::Path;
use std::process::{Command, Output};

fn birkhoff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_birkhoff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

#[test]
fn grid_csv_is_deterministic_and_well_formed() {
    let a = birkhoff(&["grid", "--grid", "lgl", "--n", "8"]);
    let b = birkhoff(&["grid", "--grid", "lgl", "--n", "8"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,node,weight"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    let first: Vec<f64> = rows[0].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    let last: Vec<f64> = rows[8].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], -1.0);
    assert_eq!(last[0], 1.0);
}

#[test]
fn grid_json_carries_nodes_and_weights() {
    let out = birkhoff(&["grid", "--grid", "cgl", "--n", "12", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("valid json");
    assert_eq!(v["code"], "cgl");
    assert_eq!(v["nodes"].as_array().unwrap().len(), 13);
    assert_eq!(v["weights"].as_array().unwrap().len(), 13);
}

#[test]
fn usage_errors_exit_3() {
    let bad_grid = birkhoff(&["grid", "--grid", "nope", "--n", "8"]);
    assert_eq!(bad_grid.status.code(), Some(3));

    let bad_problem = birkhoff(&["solve", "--problem", "nope"]);
    assert_eq!(bad_problem.status.code(), Some(3));

    let missing_arg = birkhoff(&["grid", "--grid", "lgl"]);
    assert_eq!(missing_arg.status.code(), Some(3));
}

#[test]
fn help_exits_0() {
    let out = birkhoff(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for sub in ["grid", "birkhoff", "cond", "solve", "verify", "bench"] {
        assert!(stdout(&out).contains(sub));
    }
}

#[test]
fn solve_writes_a_verifiable_solution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lq.json");
    let solved = birkhoff(&["solve", "--problem", "lq", "--out", path.to_str().unwrap()]);
    assert!(solved.status.success(), "{}", String::from_utf8_lossy(&solved.stderr));

    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).expect("valid json");
    assert_eq!(v["problem"], "lq");
    assert_eq!(v["status"], "optimal");
    assert!(v["objective"].as_f64().is_some());
    assert!(!v["x"].as_array().unwrap().is_empty());

    let verified = birkhoff(&["verify", path.to_str().unwrap()]);
    assert_eq!(verified.status.code(), Some(0));
}

#[test]
fn verify_rejects_a_corrupted_solution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lq.json");
    let solved = birkhoff(&["solve", "--problem", "lq", "--out", path.to_str().unwrap()]);
    assert!(solved.status.success());

    let text = std::fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for row in v["x"].as_array_mut().unwrap() {
        for entry in row.as_array_mut().unwrap() {
            let shifted = entry.as_f64().unwrap() + 0.05;
            *entry = serde_json::json!(shifted);
        }
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();

    let verified = birkhoff(&["verify", bad.to_str().unwrap()]);
    assert_eq!(verified.status.code(), Some(2));
}

#[test]
fn bench_runs_the_quick_problems() {
    let dir = tempfile::tempdir().unwrap();
    let out = birkhoff(&["bench", "--problems", "lq", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("lq"));
    assert!(Path::new(&dir.path().join("lq.json")).exists());

    let listed = birkhoff(&["bench", "--list"]);
    assert!(listed.status.success());
    for name in ["lq", "ml1", "breakwell", "orbit_transfer"] {
        assert!(stdout(&listed).contains(name));
    }
}

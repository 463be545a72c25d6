use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_oistab"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let (code, stdout, stderr) = run(args);
    let v = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("{e}: {stdout} {stderr}"));
    (code, v)
}

fn companion(dir: &Path, c: &str) -> String {
    let path = dir.join("sys.mat");
    fs::write(&path, format!("A\n0 1 0\n0 0 1\n-6 -11 -6\nB\n0\n0\n1\nC\n{c}\n")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn ysq_has_relative_degree_one() {
    let (code, v) = run_json(&["reldeg", "--corpus", "ysq"]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["outcome"], "has_degree");
    assert_eq!(v["report"]["r"], 1);
    assert_eq!(v["seed"], 1);
}

#[test]
fn yatan_has_no_relative_degree() {
    let (code, v) = run_json(&["reldeg", "--corpus", "yatan"]);
    assert_eq!(code, 1);
    assert_eq!(v["report"]["outcome"], "no_degree");
}

#[test]
fn unstable_zero_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, v) = run_json(&["zeros", "--file", &companion(dir.path(), "-1 1 0")]);
    assert_eq!(code, 1);
    assert_eq!(v["report"]["minimum_phase"], false);
    let zero = &v["report"]["zeros"][0];
    assert!((zero["re"].as_f64().unwrap() - 1.0).abs() < 1e-8);

    let (code, v) = run_json(&["zeros", "--file", &companion(dir.path(), "4 1 0")]);
    assert_eq!(code, 0);
    assert!((v["report"]["zeros"][0]["re"].as_f64().unwrap() + 4.0).abs() < 1e-8);
}

#[test]
fn zeros_of_nonlinear_model_is_an_error() {
    let (code, _, stderr) = run(&["zeros", "--corpus", "eq25"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("no matrix form"));
}

#[test]
fn tool_errors_exit_two() {
    let (code, _, stderr) = run(&["reldeg", "--corpus", "nope"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("unknown corpus key"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    fs::write(&path, "states 1\nx1' = (u1\ny1 = x1\n").unwrap();
    let (code, _, stderr) = run(&["validate", "--file", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line 2"));
}

#[test]
fn eq25_is_not_uniformly_zero_detectable() {
    let args = ["certify", "--corpus", "eq25", "--property", "detectability", "--order", "0", "--uniform"];
    let (code, v) = run_json(&args);
    assert_eq!(code, 1);
    let cert = &v["report"]["certificate"];
    assert_eq!(cert["verdict"], "violated");
    let worst = cert["worst"]["traj"].as_u64().unwrap() as usize;
    let families = cert["ensemble"]["families"].as_array().unwrap();
    assert_eq!(families[worst % families.len()], "switching");
}

#[test]
fn eq25_is_uniformly_one_detectable() {
    let args = [
        "certify", "--corpus", "eq25", "--property", "detectability", "--order", "1", "--uniform", "--beta",
        "3,1,1", "--gamma", "4,3", "--count", "20",
    ];
    let (code, v) = run_json(&args);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["certificate"]["verdict"], "holds");
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let (code, _, _) = run(&[
            "certify", "--corpus", "integrator", "--property", "output-input", "-N", "1", "--count", "10",
            "--horizon", "2", "--seed", "5", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let (_, x, _) = run(&["falsify", "--corpus", "example4", "--budget", "200"]);
    let (_, y, _) = run(&["falsify", "--corpus", "example4", "--budget", "200"]);
    assert_eq!(x, y);
}

#[test]
fn falsify_flags_example5() {
    let (code, v) = run_json(&["falsify", "--corpus", "example5", "--budget", "500"]);
    assert_eq!(code, 1);
    assert_eq!(v["report"]["strong_evidence"], true);
    let (code, v) = run_json(&["falsify", "--corpus", "example4", "--budget", "500"]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["strong_evidence"], false);
}

#[test]
fn reports_carry_schema_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let (code, _, _) = run(&["reldeg", "--corpus", "eq25", "--out", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&path).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], "1");
    assert_eq!(v["command"], "reldeg");
    let again: Value = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(v, again);
    assert_eq!(serde_json::to_string_pretty(&v).unwrap() + "\n", text);
}

#[test]
fn sampled_verdicts_surface_at_top_level() {
    let (_, v) = run_json(&["reldeg", "--corpus", "yatan"]);
    assert_eq!(v["probabilistic"], v["report"]["probabilistic"]);
    let (_, v) = run_json(&["corpus-list"]);
    assert_eq!(v["probabilistic"], false);
    assert_eq!(v["report"]["models"].as_array().unwrap().len(), 9);
}

#[test]
fn csv_columns_follow_jet_order() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let (code, v) = run_json(&[
        "simulate", "--corpus", "example4", "--u", "1,-1", "--horizon", "1", "-N", "1", "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,x1,x2,x3,x4,u1,u2,y1_d0,y1_d1,y2_d0,y2_d1");
    let (_, jets) = run_json(&["jets", "--corpus", "example4", "-N", "1"]);
    let columns: Vec<&str> = jets["report"]["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert!(header.ends_with(&columns.join(",")));
    assert_eq!(v["report"]["nodes"], text.lines().count() - 1);
}

#[test]
fn switching_input_reproduces_trajectory() {
    let (code, v) = run_json(&["simulate", "--corpus", "eq25", "--switching", "--horizon", "10"]);
    assert_eq!(code, 0);
    let x = v["report"]["final_state"].as_array().unwrap();
    assert!(x[0].as_f64().unwrap().abs() < 0.05);
    assert!((x[1].as_f64().unwrap() - 1.0).abs() < 1e-2);
}

#[test]
fn lyapunov_dissipation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decay.txt");
    fs::write(&path, "system decay\nstates 1\nx1' = -x1\ny1 = x1\n").unwrap();
    let args = ["lyapunov", "--file", path.to_str().unwrap(), "--v", "x1^2", "--alpha", "0,1", "--chi", "0,2"];
    let (code, v) = run_json(&args);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["check"]["holds"], true);
    let (code, _) = run_json(&["lyapunov", "--corpus", "integrator", "--v", "x1^2", "--alpha", "0,1", "--chi", "0,2"]);
    assert_eq!(code, 1);
}

#[test]
fn composed_gains_are_class_k() {
    let (code, v) = run_json(&["gains", "--composition", "detectability"]);
    assert_eq!(code, 0);
    let beta = &v["report"]["composed"]["beta"];
    assert_eq!(beta["valid"], true);
    assert!((beta["values"][2][2].as_f64().unwrap() - 3.0).abs() < 1e-12);
    let (_, v) = run_json(&["gains", "--composition", "cascade3"]);
    assert_eq!(v["report"]["composed"]["beta1_tilde"]["reconstructed"], true);
    assert_eq!(v["report"]["composed"]["beta2_tilde"]["reconstructed"], false);
}

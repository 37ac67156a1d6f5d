use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_quadsep"));
    c.env_remove("QUADSEP_THREADS");
    c
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SOBOLEV1: &str = r#""problem": {"family": "sobolev_derivative", "sigma": [1], "alpha": [0]}"#;

#[test]
fn rate_reports_plug_in_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"family": "sobolev_derivative", "sigma": [2], "alpha": [0]}, "n": 1000000, "gamma": 0.05}"#,
    );
    let v = json_of(&run(&["rate", "--config", cfg.to_str().unwrap()]));
    assert!((v["rate_exponent"].as_f64().unwrap() - 4.0 / 9.0).abs() < 1e-12);
    for k in ["r_star", "C_star", "T"] {
        assert!(v[k].as_f64().unwrap() > 0.0, "{k}");
    }
    assert!(v["condition_flags"].is_object());
}

#[test]
fn rate_two_sample_irregular() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"family": "two_sample_norm", "sigma": [2], "alpha": [1.5]}, "n": 1000000}"#,
    );
    let v = json_of(&run(&["rate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["regime"], "irregular");
    assert!((v["rate_exponent"].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-12);
}

#[test]
fn invalid_delta_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"family": "sobolev_derivative", "sigma": [2], "alpha": [2]}, "n": 1000}"#,
    );
    let out = run(&["rate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("delta"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &format!("{{{SOBOLEV1}, \"n\": 100, \"sigma\": 3}}"));
    let out = run(&["rate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sigma"));
}

#[test]
fn numerical_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &format!("{{{SOBOLEV1}, \"n\": 8}}"));
    let out = run(&["weights", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn weights_csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &format!("{{{SOBOLEV1}, \"n\": 2000, \"gamma\": 0.1}}"));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = run(&["weights", "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let mut rdr = csv::Reader::from_path(&a).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["l1", "c", "q", "w_star", "v_star"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let sum_w2: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap().powi(2)).sum();
    assert!((sum_w2 - 1.0).abs() < 1e-8);
    let rate = json_of(&run(&["rate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(rows.len() as u64, rate["numeric"]["active_set_size"].as_u64().unwrap());
}

fn zero_data(dir: &Path, n: usize) -> PathBuf {
    let mut s = String::from("t1,x\n");
    for i in 0..n {
        s.push_str(&format!("{},0\n", (i as f64 + 0.5) / n as f64));
    }
    write(dir, "zero.csv", &s)
}

#[test]
fn test_on_zero_responses() {
    let dir = tempfile::tempdir().unwrap();
    let data = zero_data(dir.path(), 1000);
    let cfg = write(dir.path(), "c.json", &format!("{{{SOBOLEV1}, \"gamma\": 0.05}}"));
    let v = json_of(&run(&["test", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["report"]["reject"], false);
    assert!(v["report"]["statistic"].is_number());
    assert_eq!(v["config"]["n"], 1000);
}

#[test]
fn test_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &format!("{{{SOBOLEV1}}}"));
    let cases = [
        ("t1,t2,x\n0.1,0.2,1\n", 2, "t2"),
        ("t1,t1,x\n0.1,0.2,1\n", 3, "duplicated column 't1'"),
        ("t1,x\n0.1,1\n0.2,1\n0.3,oops\n", 3, "line 4"),
        ("t1,x\n0.1,1\n1.5,1\n", 3, "outside [0,1]"),
    ];
    for (body, code, needle) in cases {
        let data = write(dir.path(), "d.csv", body);
        let out = run(&["test", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(code), "{body}: {}", stderr(&out));
        assert!(stderr(&out).contains(needle), "{body}: {}", stderr(&out));
    }
}

#[test]
fn simulate_writes_both_artifacts_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &format!("{{{SOBOLEV1}, \"n\": 300, \"gamma\": 0.1, \"reps\": 100, \"weights\": {{\"source\": \"threshold\", \"t\": 2000}}}}"),
    );
    let out_path = dir.path().join("run.json");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_path.to_str().unwrap(), "--seed", "7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!(v["config"]["noise"]["kind"], "gaussian");
    assert_eq!(v["config"]["tau"], 1.0);
    assert_eq!(v["estimates"]["replications"], 100);
    let reps = std::fs::read_to_string(dir.path().join("run.reps.csv")).unwrap();
    let mut lines = reps.lines();
    assert_eq!(lines.next(), Some("rep,statistic,threshold,reject,hypothesis"));
    assert_eq!(lines.count(), 200);
}

#[test]
fn failed_simulation_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &format!("{{{SOBOLEV1}, \"n\": 300, \"reps\": 10, \"weights\": {{\"source\": \"threshold\", \"t\": 2000}}}}"),
    );
    let out_path = dir.path().join("run.json");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let left: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from("c.json")]);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &format!("{{{SOBOLEV1}, \"n\": 300, \"reps\": 100, \"weights\": {{\"source\": \"threshold\", \"t\": 2000}}}}"),
    );
    let one = bin().args(["simulate", "--config", cfg.to_str().unwrap()]).env("QUADSEP_THREADS", "1").output().unwrap();
    let four = run(&["simulate", "--config", cfg.to_str().unwrap(), "--threads", "4"]);
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

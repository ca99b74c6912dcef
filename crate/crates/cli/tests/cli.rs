use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn prom3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prom3"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_qcqp(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("qcqp.json");
    let o = prom3(&[
        "generate",
        "qcqp",
        "--m",
        "2",
        "--n",
        "6",
        "--p",
        "2",
        "--j",
        "2",
        "--seed",
        "7",
        "--out",
        path_str(&path),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

fn small_newsvendor(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("nv.json");
    let o = prom3(&[
        "generate",
        "newsvendor",
        "--m",
        "2",
        "--n",
        "10",
        "--seed",
        "3",
        "--out",
        path_str(&path),
    ]);
    assert_eq!(code(&o), 0);
    path
}

fn digest_line(o: &Output) -> String {
    stdout(o)
        .lines()
        .find(|l| l.starts_with("digest "))
        .expect("digest printed")
        .to_string()
}

#[test]
fn generate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |p: &Path| {
        prom3(&[
            "generate",
            "qcqp",
            "--m",
            "3",
            "--n",
            "50",
            "--p",
            "5",
            "--j",
            "5",
            "--seed",
            "7",
            "--out",
            path_str(p),
        ])
    };
    let (oa, ob) = (args(&a), args(&b));
    assert_eq!(digest_line(&oa), digest_line(&ob));
    assert!(stdout(&oa).contains("slater margin"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn newsvendor_metadata_echoes_parameters() {
    let dir = TempDir::new().unwrap();
    let doc: Value =
        serde_json::from_str(&std::fs::read_to_string(small_newsvendor(&dir)).unwrap()).unwrap();
    assert_eq!(doc["metadata"]["kappa"], 0.9);
    assert_eq!(doc["metadata"]["radius"], 0.1);
}

#[test]
fn lse_with_one_term_is_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("l.json");
    let o = prom3(&[
        "generate",
        "lse",
        "--m",
        "2",
        "--n",
        "4",
        "--j",
        "1",
        "--seed",
        "1",
        "--out",
        path_str(&path),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!path.exists());
}

#[test]
fn solve_writes_one_row_per_outer_iteration() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let csv = dir.path().join("t.csv");
    let summary = dir.path().join("s.json");
    let o = prom3(&[
        "solve",
        "--instance",
        path_str(&inst),
        "--k",
        "12",
        "--c-t",
        "0.5",
        "--out",
        path_str(&csv),
        "--summary",
        path_str(&summary),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with("iter,time_s,objective,violation,lambda_norm"));

    // summary totals equal the last row's cumulative counters
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    let last: Vec<&str> = lines[12].split(',').collect();
    let c = &s["counters"];
    assert_eq!(c["f0"].as_u64().unwrap().to_string(), last[5]);
    assert_eq!(c["gx"].as_u64().unwrap().to_string(), last[6]);
    assert_eq!(c["gz"].as_u64().unwrap().to_string(), last[7]);
    assert_eq!(c["h"].as_u64().unwrap().to_string(), last[8]);
    let proj = c["proj_x"].as_u64().unwrap() + c["proj_z"].as_u64().unwrap();
    assert_eq!(proj.to_string(), last[9]);
    assert_eq!(
        s["objective"].as_f64().unwrap(),
        last[2].parse::<f64>().unwrap()
    );
    assert_eq!(
        s["violation"].as_f64().unwrap(),
        last[3].parse::<f64>().unwrap()
    );
    assert_eq!(s["resolved"]["k"], 12);
}

#[test]
fn repeated_solves_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = prom3(&[
            "solve",
            "--instance",
            path_str(&inst),
            "--k",
            "10",
            "--c-t",
            "0.5",
            "--no-timing",
            "--out",
            path_str(&out),
        ]);
        assert_eq!(code(&o), 0);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
    let threads = dir.path().join("c.csv");
    prom3(&[
        "--threads",
        "1",
        "solve",
        "--instance",
        path_str(&inst),
        "--k",
        "10",
        "--c-t",
        "0.5",
        "--no-timing",
        "--out",
        path_str(&threads),
    ]);
    assert_eq!(run("d.csv"), std::fs::read(threads).unwrap());
}

#[test]
fn extended_run_reports_dual_caps() {
    let dir = TempDir::new().unwrap();
    let inst = small_newsvendor(&dir);
    let summary = dir.path().join("s.json");
    let o = prom3(&[
        "solve",
        "--instance",
        path_str(&inst),
        "--algorithm",
        "prom3x",
        "--k",
        "5",
        "--c-t",
        "0.5",
        "--summary",
        path_str(&summary),
        "--out",
        path_str(&dir.path().join("t.csv")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    let caps = s["caps"].as_array().unwrap();
    assert_eq!(caps.len(), 2);
    assert!(caps.iter().all(|c| c.as_f64().unwrap() > 0.0));
    assert_eq!(s["mu"].as_array().unwrap().len(), 2);
    assert!(s["certified_violation"].is_number());
}

#[test]
fn extended_run_needs_cut_sets() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let o = prom3(&[
        "solve",
        "--instance",
        path_str(&inst),
        "--algorithm",
        "prom3x",
        "--k",
        "2",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_round_cutting_plane_is_not_converged() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let csv = dir.path().join("cp.csv");
    let o = prom3(&[
        "solve",
        "--instance",
        path_str(&inst),
        "--algorithm",
        "cutting-plane",
        "--max-rounds",
        "0",
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(code(&o), 2);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn unknown_flags_and_conflicts_exit_with_error() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    assert_eq!(
        code(&prom3(&[
            "solve",
            "--instance",
            path_str(&inst),
            "--bogus",
            "1"
        ])),
        1
    );
    let o = prom3(&[
        "solve",
        "--instance",
        path_str(&inst),
        "--inner-t",
        "5",
        "--c-t",
        "1",
    ]);
    assert_eq!(code(&o), 1);
    assert_eq!(
        code(&prom3(&["solve", "--instance", "/nonexistent/x.json"])),
        1
    );
    assert_eq!(code(&prom3(&["--help"])), 0);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "k = 4\ninner-t = 30\n").unwrap();
    let run = |extra: &[&str]| {
        let csv = dir.path().join("t.csv");
        let mut args = vec![
            "solve",
            "--instance",
            path_str(&inst),
            "--config",
            path_str(&cfg),
        ];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", path_str(&csv)]);
        let o = prom3(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(csv).unwrap().lines().count() - 1
    };
    assert_eq!(run(&[]), 4);
    assert_eq!(run(&["--k", "6"]), 6);

    std::fs::write(&cfg, "k = 4\nunknown-key = 1\n").unwrap();
    let o = prom3(&[
        "solve",
        "--instance",
        path_str(&inst),
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn check_passes_on_generated_instances() {
    let dir = TempDir::new().unwrap();
    for inst in [small_qcqp(&dir), small_newsvendor(&dir)] {
        let o = prom3(&["check", "--instance", path_str(&inst), "--trials", "10"]);
        assert_eq!(code(&o), 0, "{}", stdout(&o));
        assert!(stdout(&o).contains("all checks passed"));
    }
}

#[test]
fn check_flags_a_corrupted_bound() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&inst).unwrap()).unwrap();
    doc["objective_bound"] = Value::from(1e-3);
    std::fs::write(&inst, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = prom3(&["check", "--instance", path_str(&inst), "--trials", "10"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("exceeds declared bound"));
}

#[test]
fn check_skips_missing_slater_point() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&inst).unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("slater_point");
    std::fs::write(&inst, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = prom3(&["check", "--instance", path_str(&inst), "--trials", "10"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Slater check skipped"));
}

#[test]
fn bench_writes_a_table_and_traces() {
    let dir = TempDir::new().unwrap();
    let inst = small_qcqp(&dir);
    let out = dir.path().join("bench");
    let o = prom3(&[
        "bench",
        "--instance",
        path_str(&inst),
        "--ks",
        "2,4",
        "--c-t",
        "0.5",
        "--no-timing",
        "--out-dir",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(
        std::fs::read_to_string(out.join("trace_k4.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
}

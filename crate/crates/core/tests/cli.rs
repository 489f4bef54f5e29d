use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oneloop_dse::correction::{CorrectionModel, SAMPLE_SCHEMA};
use oneloop_dse::design::Design;

const BIN: &str = env!("CARGO_BIN_EXE_oneloop");

fn workload(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads").join(name)
}

fn oneloop(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn quick_search(out: &Path, seed: &str, extra: &[&str]) -> Output {
    let w = workload("toy_cnn.txt");
    let mut args = vec![
        "search",
        "--workload",
        w.to_str().unwrap(),
        "--seeds",
        "2",
        "--steps",
        "60",
        "--round-every",
        "20",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    oneloop(&args)
}

#[test]
fn missing_workload_is_a_usage_error() {
    let o = oneloop(&["search", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--workload"));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_and_strategy_are_usage_errors() {
    assert_eq!(oneloop(&["search", "--bogus"]).status.code(), Some(2));
    let w = workload("tiny.txt");
    let o = oneloop(&["search", "--workload", w.to_str().unwrap(), "--strategy", "greedy", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_workload_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = oneloop(&["search", "--workload", "/nonexistent/w.txt", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/w.txt"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(BIN)
        .env("ONELOOP_THREADS", "zero")
        .args(["correlate", "--workload", "w", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn random_baseline_spends_exactly_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = quick_search(dir.path(), "3", &["--budget", "100", "--baseline", "random"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("search_trace.csv")).unwrap();
    assert!(trace.starts_with("# schema: oneloop-search-trace/v1\n"));
    assert_eq!(trace.lines().filter(|l| l.starts_with("random,")).count(), 100);
    assert!(trace.lines().filter(|l| l.starts_with("gd,")).count() <= 100);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("improvement_vs_start:"));
    assert!(summary.contains("random_evaluations: 100"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = quick_search(d.path(), "11", &["--baseline", "random", "--strategy", "iterative"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["search_trace.csv", "best_design.txt", "summary.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

fn field(line: &str, key: &str) -> f64 {
    let mut it = line.split_whitespace();
    while let Some(t) = it.next() {
        if t == key {
            return it.next().unwrap().parse().unwrap();
        }
    }
    panic!("no `{key}` in `{line}`");
}

#[test]
fn best_design_reproduces_final_trace_edp() {
    let dir = tempfile::tempdir().unwrap();
    let o = quick_search(dir.path(), "5", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("search_trace.csv")).unwrap();
    let last = trace.lines().last().unwrap();
    let best_so_far: f64 = last.split(',').nth(7).unwrap().parse().unwrap();

    let design = dir.path().join("best_design.txt");
    let w = workload("toy_cnn.txt");
    let o = oneloop(&["evaluate", "--design", design.to_str().unwrap(), "--workload", w.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let net = out.lines().find(|l| l.starts_with("network:")).unwrap();
    assert_eq!(field(net, "edp"), best_so_far);
}

#[test]
fn evaluate_rejects_designs_that_do_not_fit() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(quick_search(dir.path(), "2", &[]).status.code(), Some(0));
    let path = dir.path().join("best_design.txt");
    let mut d = Design::load(&path).unwrap();
    d.arch.sp_bytes = 1024;
    d.arch.acc_bytes = 1024;
    d.arch.pe_side = 1;
    d.save(&path).unwrap();
    let w = workload("toy_cnn.txt");
    let o = oneloop(&["evaluate", "--design", path.to_str().unwrap(), "--workload", w.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not fit"), "{}", stderr(&o));
}

#[test]
fn zero_correction_leaves_evaluation_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(quick_search(dir.path(), "4", &[]).status.code(), Some(0));
    let ckpt = dir.path().join("zero.json");
    CorrectionModel::zero().save(&ckpt).unwrap();
    let design = dir.path().join("best_design.txt");
    let w = workload("toy_cnn.txt");
    let o = oneloop(&[
        "evaluate",
        "--design",
        design.to_str().unwrap(),
        "--workload",
        w.to_str().unwrap(),
        "--correction",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for l in out.lines().filter(|l| l.starts_with("layer ")) {
        assert_eq!(field(l, "latency"), field(l, "corrected_latency"), "{l}");
    }
    let net = out.lines().find(|l| l.starts_with("network:")).unwrap();
    let cor = out.lines().find(|l| l.starts_with("network corrected:")).unwrap();
    assert_eq!(field(net, "latency"), field(cor, "latency"));
    assert_eq!(field(net, "edp"), field(cor, "edp"));
}

#[test]
fn correlate_reports_zero_error_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let w = workload("tiny.txt");
    for d in [&a, &b] {
        let o = oneloop(&["correlate", "--workload", w.to_str().unwrap(), "--samples", "60", "--seed", "8", "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["correlation.csv", "correlation_fields.csv", "summary.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let summary = std::fs::read_to_string(a.path().join("summary.txt")).unwrap();
    assert!(summary.contains("latency_mae_percent: 0\n"), "{summary}");
    assert!(summary.contains("max_rel_error_any_field: 0\n"), "{summary}");
    let csv = std::fs::read_to_string(a.path().join("correlation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 60);
}

#[test]
fn correlate_with_no_samples_flags_undefined_mae() {
    let dir = tempfile::tempdir().unwrap();
    let w = workload("tiny.txt");
    let o = oneloop(&["correlate", "--workload", w.to_str().unwrap(), "--samples", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("correlation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(stdout(&o).contains("undefined"));
}

#[test]
fn correlate_names_layer_over_oracle_cap() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("big.txt");
    std::fs::write(&w, "name = big\nlayer R=1 S=1 P=2 Q=2 C=2 K=2 N=1\nlayer R=3 S=3 P=64 Q=64 C=64 K=64 N=1\n").unwrap();
    let o = oneloop(&["correlate", "--workload", w.to_str().unwrap(), "--samples", "4", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("P=64"), "{}", stderr(&o));
}

fn gen_samples(out: &Path, n: &str, residual: &str) {
    let w = workload("tiny.txt");
    let o = oneloop(&[
        "gen-samples",
        "--workload",
        w.to_str().unwrap(),
        "--n",
        n,
        "--residual",
        residual,
        "--noise",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn training_refuses_small_sample_sets() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.csv");
    gen_samples(&s, "49", "zero");
    assert!(std::fs::read_to_string(&s).unwrap().starts_with(SAMPLE_SCHEMA));
    let o = oneloop(&["train-correction", "--samples", s.to_str().unwrap(), "--epochs", "2", "--out", dir.path().join("m.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 50"), "{}", stderr(&o));
}

#[test]
fn zero_residual_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.csv");
    gen_samples(&s, "80", "zero");
    for name in ["a.json", "b.json"] {
        let o = oneloop(&["train-correction", "--samples", s.to_str().unwrap(), "--epochs", "5", "--seed", "3", "--out", dir.path().join(name).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.loss.csv")).unwrap(),
        std::fs::read(dir.path().join("b.loss.csv")).unwrap()
    );
    let curve = std::fs::read_to_string(dir.path().join("a.loss.csv")).unwrap();
    let test_loss: f64 = curve.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(test_loss < 1e-4);
}

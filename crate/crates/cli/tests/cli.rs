use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn latentdag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentdag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = latentdag(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    latentdag(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small benchmark bundle in `dir/sim`.
fn simulate(dir: &Path, seed: &str) -> PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--out", p(&sim), "--seed", seed, "-n", "400", "--children", "4"]);
    sim
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Relative path to file contents for every file below `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn deconfound_args<'a>(sim: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let input = sim.join("observed.csv");
    let truth = sim.join("truth.json");
    let mut v = vec![
        "deconfound",
        "--input",
        Box::leak(input.to_str().unwrap().to_string().into_boxed_str()),
        "--roles",
        Box::leak(truth.to_str().unwrap().to_string().into_boxed_str()),
        "--out",
        p(out),
        "--seed",
        "3",
        "--boot",
        "5",
        "--n-perm",
        "10",
        "--max-iter",
        "3",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn simulate_writes_bundle_and_is_repeatable() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "5");
    for f in ["observed.csv", "full.csv", "truth.json", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let b = dir.path().join("again");
    ok(&["simulate", "--out", p(&b), "--seed", "5", "-n", "400", "--children", "4"]);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn zero_samples_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&["simulate", "--out", p(dir.path()), "-n", "0"]), 2);
}

#[test]
fn learn_writes_graph_artifacts_honoring_threshold() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "1");
    let input = sim.join("observed.csv");
    let truth = sim.join("truth.json");
    let mut edge_sets = Vec::new();
    for t in ["0.4", "0.8"] {
        let out = dir.path().join(format!("learn_{t}"));
        ok(&["learn", "--input", p(&input), "--roles", p(&truth), "--truth", p(&truth), "--out", p(&out), "--boot", "10", "--threshold", t]);
        for f in ["graph.json", "graph.dot", "coefficients.csv", "edge_frequencies.csv", "manifest.json"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let g = json(&out.join("graph.json"));
        let edges = g["edges"].as_array().unwrap();
        let thr: f64 = t.parse().unwrap();
        let mut set = std::collections::BTreeSet::new();
        for e in edges {
            assert!(e["frequency"].as_f64().unwrap() >= thr);
            assert_ne!(e["from"], "Z", "Z must stay a sink");
            set.insert((e["from"].as_str().unwrap().to_string(), e["to"].as_str().unwrap().to_string()));
        }
        let dot = std::fs::read_to_string(out.join("graph.dot")).unwrap();
        assert!(dot.starts_with("digraph"));
        assert!(!dot.contains("\"Z\" ->"));
        edge_sets.push(set);
    }
    assert!(edge_sets[1].is_subset(&edge_sets[0]));
}

#[test]
fn malformed_csv_reports_its_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "a,b,c\n1,2,3\n4,oops,6\n").unwrap();
    let out = latentdag(&["learn", "--input", p(&input), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn constant_column_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("flat.csv");
    let mut text = String::from("a,b\n");
    for i in 0..30 {
        text.push_str(&format!("{},{}\n", i % 7, 2.5));
    }
    std::fs::write(&input, text).unwrap();
    assert_eq!(code(&["learn", "--input", p(&input), "--out", p(&dir.path().join("o")), "--boot", "2"]), 4);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "2");
    let input = sim.join("observed.csv");
    let out = dir.path().join("o");
    assert_eq!(code(&["learn", "--input", p(&input), "--out", p(&out), "--threshold", "1.5"]), 2);
    let roles = dir.path().join("roles.json");
    std::fs::write(&roles, r#"{"columns":[{"name":"nope","role":"outcome","kind":"continuous"}]}"#).unwrap();
    assert_eq!(code(&["learn", "--input", p(&input), "--roles", p(&roles), "--out", p(&out)]), 2);
    assert_eq!(code(&["--threads", "0", "learn", "--input", p(&input), "--out", p(&out)]), 2);
    assert_eq!(code(&deconfound_args(&sim, &out, &["--epsilon", "-1"])), 2);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&["learn", "--input", p(&dir.path().join("none.csv")), "--out", p(dir.path())]), 3);
}

#[test]
fn deconfound_with_truth_reports_truth_metrics() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "4");
    let out = dir.path().join("run");
    let truth = sim.join("truth.json");
    let mut args = deconfound_args(&sim, &out, &["--truth"]);
    args.push(p(&truth));
    ok(&args);
    for f in ["trace.csv", "summary.json", "metrics.json", "metrics.csv", "plot_data.csv", "manifest.json", "baseline/graph.json", "final/graph.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m = json(&out.join("metrics.json"));
    assert!(m["coef_rmse_all"].is_number());
    assert!(m["coef_rmse_drivers"].is_number());
    assert!(m["cap"]["Z"]["bound"].is_number());
    let summary = json(&out.join("summary.json"));
    if summary["best_iteration"].as_u64().unwrap() > 0 {
        assert!(m["latent_r2"]["U1"].is_number());
    }
    let plot = std::fs::read_to_string(out.join("plot_data.csv")).unwrap();
    assert!(plot.starts_with("iteration,metric,value"));
    assert!(plot.contains(",coef_rmse_drivers,"));
}

#[test]
fn deconfound_without_truth_is_not_evaluable() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "4");
    let out = dir.path().join("run");
    let input = sim.join("observed.csv");
    ok(&["deconfound", "--input", p(&input), "--out", p(&out), "--boot", "5", "--n-perm", "10", "--max-iter", "2"]);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["cap"], "not evaluable");
    assert!(m.get("coef_rmse_all").is_none());
    assert!(m.get("latent_r2").is_none());
}

#[test]
fn zero_epsilon_runs_every_iteration() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--out", p(&sim), "--seed", "1", "-n", "500", "--children", "20"]);
    let out = dir.path().join("run");
    let mut args = deconfound_args(&sim, &out, &["--epsilon", "0"]);
    let k = args.iter().position(|a| *a == "--max-iter").unwrap();
    args[k + 1] = "20";
    ok(&args);
    let iters = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("iter_"))
        .count();
    assert_eq!(iters, 20);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["iterations"], 20);
    assert_eq!(std::fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 22);
}

#[test]
fn eval_is_idempotent_and_matches_the_run() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "6");
    let run = dir.path().join("run");
    let truth = sim.join("truth.json");
    let mut args = deconfound_args(&sim, &run, &["--truth"]);
    args.push(p(&truth));
    ok(&args);
    let e1 = dir.path().join("eval1");
    let e2 = dir.path().join("eval2");
    for e in [&e1, &e2] {
        ok(&["eval", "--run", p(&run), "--truth", p(&truth), "--out", p(e)]);
    }
    assert_eq!(tree(&e1), tree(&e2));
    for f in ["metrics.json", "metrics.csv", "plot_data.csv"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(run.join(f)).unwrap(), "{f}");
    }
    let bare = dir.path().join("bare");
    ok(&["eval", "--run", p(&run), "--out", p(&bare)]);
    let m = json(&bare.join("metrics.json"));
    assert_eq!(m["cap"], "not evaluable");
    assert!(m.get("structure").is_none());
}

#[test]
fn eval_rejects_broken_runs() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "7");
    let run = dir.path().join("run");
    ok(&deconfound_args(&sim, &run, &[]));
    std::fs::write(run.join("final/graph.json"), "{ not json").unwrap();
    assert_eq!(code(&["eval", "--run", p(&run), "--out", p(&dir.path().join("e"))]), 3);
    std::fs::remove_file(run.join("final/graph.json")).unwrap();
    let out = latentdag(&["eval", "--run", p(&run), "--out", p(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), "8");
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    let mut a = vec!["--threads", "1"];
    a.extend(deconfound_args(&sim, &one, &[]));
    let mut b = vec!["--threads", "4"];
    b.extend(deconfound_args(&sim, &four, &[]));
    ok(&a);
    ok(&b);
    assert_eq!(tree(&one), tree(&four));
}

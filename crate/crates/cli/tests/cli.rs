use std::path::Path;
use std::process::{Command, Output};

use frogsim_cli::{results_csv, run, ConfigFile};

const SWEEP: &str = "\
experiment = survival
graph = tree:3:20
lambda = 0.5:3.0:0.5
t = 1
n = 20
replicas = 2000
seed = 7
";

fn frogsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frogsim")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn survival_sweep_is_monotone_in_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let out_dir = dir.path().join("out");
    let out = frogsim(&["run", &cfg, &format!("output={}", out_dir.display())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "experiment,graph,lambda,t,n,replicas,seed,metric,mean,stderr");
    let table = rows(&csv);
    assert_eq!(table.len(), 6);
    let lambdas: Vec<f64> = table.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(lambdas, vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    let means: Vec<f64> = table.iter().map(|r| r[8].parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    for r in &table {
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], "survival");
        assert_eq!(r[5], "2000");
        assert_eq!(r[6], "7");
    }

    let plot = std::fs::read_to_string(out_dir.join("plot.gp")).unwrap();
    assert!(plot.contains("'results.csv'"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 6);
    assert!(out_dir.join("survival-7.csv").exists());
    assert!(out_dir.join("survival-7.json").exists());
}

#[test]
fn zero_replicas_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let out = frogsim(&["run", &cfg, "replicas=0", &format!("output={}", dir.path().join("o").display())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replicas"));
}

#[test]
fn unknown_experiment_exit_two() {
    let out = frogsim(&["run", "experiment=warp", "seed=1", "replicas=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_lists_every_problem() {
    let out = frogsim(&["validate", "experiment=survival", "graph=tree:3:5", "lambda=-1", "t=1", "n=9", "replicas=0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["lambda", "n", "replicas", "seed"] {
        assert!(err.lines().any(|l| l.starts_with(&format!("invalid: {field}:"))), "{field} missing in {err}");
    }
    let ok = frogsim(&[
        "validate",
        "experiment=survival",
        "graph=tree:3:5",
        "lambda=1",
        "t=1",
        "n=5",
        "replicas=3",
        "seed=1",
    ]);
    assert!(ok.status.success());
}

#[test]
fn exhausted_particle_budget_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = frogsim(&[
        "run",
        "experiment=survival",
        "graph=tree:3:12",
        "lambda=4",
        "t=3",
        "n=12",
        "replicas=20",
        "seed=1",
        "max_particles=5",
        &format!("output={}", dir.path().display()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_runs_write_identical_csv_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = edge-coupling\ngraph = tree:3:7\nlambda = 2\nt = 1\nreplicas = 300\nseed = 11\n",
    );
    let mut outputs = Vec::new();
    for (k, workers) in ["1", "4", "4"].iter().enumerate() {
        let out_dir = dir.path().join(format!("w{k}"));
        let out = frogsim(&["run", &cfg, &format!("workers={workers}"), &format!("output={}", out_dir.display())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn library_run_matches_binary_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ConfigFile::parse(
        "experiment = linear-growth\ngraph = ladder:2:40\nlambda = 2\nt = 2\nreplicas = 100\nseed = 3\n",
    );
    cfg.set("output", dir.path().to_str().unwrap());
    let resolved = cfg.resolve().unwrap();
    let outcome = run(&resolved).unwrap();
    let on_disk = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(on_disk, results_csv(&outcome.reports));
    assert!(outcome.reports[0].checks["survival_non_increasing"]);
}

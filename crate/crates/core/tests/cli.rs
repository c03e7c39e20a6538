use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn netobs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netobs"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("spawn netobs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn value(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("missing {key}"))
        .to_string()
}

#[test]
fn simulate_writes_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = netobs(dir.path(), &["--model", "hill5", "--N", "7", "simulate"]);
    assert!(out.status.success());
    let csv = read(dir.path(), "trajectory.csv");
    assert_eq!(csv.lines().next().unwrap(), "t,A,B,C,D,E");
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn estimate_recovers_simulated_state() {
    let dir = tempfile::tempdir().unwrap();
    let x0 = "0.2,0.5,0.1,0.8,0.3";
    let sim = netobs(dir.path(), &["--model", "hill5", "--N", "20", "simulate", "--x0", x0, "--observe", "B,D,E"]);
    assert!(sim.status.success());
    let obs = dir.path().join("observations.csv");
    let est = netobs(
        dir.path(),
        &["--model", "hill5", "--N", "20", "estimate", "--observations", obs.to_str().unwrap(), "--truth", x0],
    );
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let report = read(dir.path(), "estimate.csv");
    assert!(value(&report, "eta").parse::<f64>().unwrap() < 1e-8);
    assert_eq!(value(&report, "converged"), "true");
}

#[test]
fn select_reports_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = netobs(dir.path(), &["--model", "h2o2_mini", "--N", "50", "select", "--r", "3", "--solver", "greedy"]);
    assert!(out.status.success());
    let csv = read(dir.path(), "selection.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let chosen: usize = row[5..].iter().map(|b| b.parse::<usize>().unwrap()).sum();
    assert_eq!(chosen, 3);
    // AR never influences anything, so it is always measured
    assert_eq!(*row.last().unwrap(), "1");
}

#[test]
fn graph_writes_components() {
    let dir = tempfile::tempdir().unwrap();
    assert!(netobs(dir.path(), &["--model", "h2o2_mini", "graph"]).status.success());
    for f in ["oid_edges.csv", "oid.tgf", "centralities.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let scc = read(dir.path(), "scc.csv");
    assert!(scc.contains("AR,1,false"));
    assert!(scc.contains("H2,0,true"));
}

#[test]
fn gramian_eigenvalues_are_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let out = netobs(dir.path(), &["--model", "hill5", "--N", "20", "gramian", "--definition", "2", "--sensors", "A,C"]);
    assert!(out.status.success());
    let eig = read(dir.path(), "gramian_eigenvalues.csv");
    assert_eq!(eig.lines().count(), 6);
    for line in eig.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v >= -1e-12);
    }
}

#[test]
fn sweep_and_compare_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "model = \"hill5\"\nn_samples = [20]\nfractions = [0.6]\nrealizations = 2\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(netobs(dir.path(), &["sweep", "--config", cfg]).status.success());
    let sweep = read(dir.path(), "sweep.csv");
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.lines().skip(1).all(|l| l.contains(",ok,")));
    assert_eq!(read(dir.path(), "selection_probabilities.csv").lines().count(), 6);

    assert!(netobs(dir.path(), &["compare", "--config", cfg]).status.success());
    // four methods for each of the two realizations
    assert_eq!(read(dir.path(), "comparison.csv").lines().count(), 9);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = netobs(dir.path(), &["--model", "no_such_model", "simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "model = \"hill5\"\nn_samples = [20]\nbogus = 1\n").unwrap();
    let out = netobs(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    assert_eq!(netobs(dir.path(), &["select"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("singular.toml");
    // backward Euler with h·a = 1 makes the Newton matrix singular
    fs::write(&model, "kind = \"linear\"\nnames = [\"x\"]\na = [[1.0]]\ninitial = [1.0]\n").unwrap();
    let out = netobs(
        dir.path(),
        &["--model", model.to_str().unwrap(), "--scheme", "be", "--h", "1", "--N", "3", "simulate"],
    );
    assert_eq!(out.status.code(), Some(3));
}

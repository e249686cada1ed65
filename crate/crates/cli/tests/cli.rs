use std::path::Path;
use std::process::{Command, Output};

fn cliquedyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cliquedyn"))
        .args(args)
        .env("CLIQUEDYN_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, trials: u64) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        format!(
            "n = 8\nm = 3\ndelta = 0.5\neta = 0.2\nhorizon = 2000\ntrials = {trials}\nseed = 7\ninitial = {{ kind = \"uniform\" }}\n"
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let args = [
        "simulate", "--n", "20", "--m", "4", "--delta", "0.5", "--eta", "0.3", "--horizon", "2000", "--seed", "7",
        "--out", out.to_str().unwrap(),
    ];
    let o = cliquedyn(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=20).map(|i| format!("x_{i}")))
        .collect();
    assert_eq!(lines[0], header.join(","));
    assert_eq!(lines.len(), 2002);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 21));

    let manifest = std::fs::read_to_string(dir.path().join("traj.manifest.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    assert_eq!(record["command"], "simulate");
    assert_eq!(record["master_seed"], 7);
    assert_eq!(record["outputs"][0], out.to_str().unwrap());

    // same seed, same bytes
    let again = dir.path().join("again.csv");
    let mut args2 = args.to_vec();
    let last = args2.len() - 1;
    args2[last] = again.to_str().unwrap();
    assert_eq!(cliquedyn(&args2).status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn single_mover_limit_reports_pass() {
    let o = cliquedyn(&["verify", "theorem3", "--n", "4", "--x0", "0,0.5,0.9,1.0", "--eta", "0.1", "--delta", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("limit 0.633333"), "{s}");
    assert!(s.contains("PASS"));
}

#[test]
fn single_mover_outside_hypotheses_is_a_configuration_error() {
    let o = cliquedyn(&["verify", "theorem3", "--x0", "0,0.45,0.55,1.0", "--eta", "0.1", "--delta", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tstar_matches_simulation() {
    let o = cliquedyn(&["verify", "tstar", "--x0", "0.4208,0.6332,0,0.1,1", "--eta", "0.2", "--delta", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("tstar: PASS"));
}

#[test]
fn frozen_and_cluster_bound_checks() {
    let o = cliquedyn(&[
        "verify", "frozen", "--n", "9", "--m", "6", "--delta", "0.5", "--eta", "0.14", "--K", "5", "--horizon", "20000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    // node 1 sits near the mean and must move
    let o = cliquedyn(&[
        "verify", "frozen", "--n", "3", "--delta", "0.5", "--eta", "0.2", "--x0", "0.4,0.5,0.6", "--nodes", "1",
        "--horizon", "10",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = cliquedyn(&["verify", "lemma1", "--x0", "0,0.01,0.5,0.95,1.0", "--m", "4", "--s", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn classify_labels_region() {
    let o = cliquedyn(&["classify", "--x0", "0.0,0.5,0.9,1.0", "--eta", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("region: A_1"));

    let o = cliquedyn(&["classify", "--x0", "0.01,0.05,0.93,0.99", "--eta", "0.15"]);
    assert!(stdout(&o).contains("istar3: true"));
}

#[test]
fn montecarlo_rejects_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let out = dir.path().join("est.csv");
    let o = cliquedyn(&["montecarlo", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn montecarlo_writes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0);
    let out = dir.path().join("est.csv");
    let results = dir.path().join("results.jsonl");
    let o = cliquedyn(&[
        "montecarlo", "--config", &cfg, "--trials", "20", "--out", out.to_str().unwrap(), "--results",
        results.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("event,trials,successes,failures,undetermined,point,ci_lo,ci_hi\n"));
    assert_eq!(text.lines().count(), 5);
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 20);
    let manifest = std::fs::read_to_string(dir.path().join("est.manifest.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(manifest.trim()).unwrap();
    assert_eq!(record["config"]["trials"], 20);
    assert_eq!(record["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10);
    let out = dir.path().join("sweep.csv");
    let o = cliquedyn(&["sweep", "--config", &cfg, "--grid", "0.3,0.1,0.2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eta,trials,fluct_rate,ci_lo,ci_hi,undetermined");
    let values: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values, vec![0.3, 0.1, 0.2]);
}

#[test]
fn density_check_passes() {
    let o = cliquedyn(&["density-check", "--n", "6", "--indices", "2,4", "--samples", "100000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cliquedyn(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(cliquedyn(&["frobnicate"]).status.code(), Some(2));
    let o = cliquedyn(&["montecarlo", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

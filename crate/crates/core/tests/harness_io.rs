//! Integration tests for the experiment harness's external interfaces:
//! config files, sample CSV and summary JSON formats, the CLI binary, and
//! scheduling-independent reproducibility.

mod common;

use erw_lab::harness::{self, ExperimentConfig, ExperimentKind, KRule};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_erw"))
}

fn small_return_config(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::ReturnTimeDiffusive, out);
    cfg.p = 0.5;
    cfg.k = KRule::Fixed(10);
    cfg.replicas = 300;
    cfg.cap = 200_000;
    cfg.seed = 7;
    cfg
}

#[test]
fn summary_json_has_exact_top_level_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_return_config(dir.path());
    harness::run(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let obj = value.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["censoring_fraction", "config", "results", "seed", "version", "wall_seconds"]
    );
    assert_eq!(obj["seed"], serde_json::json!(7));
    assert!(obj["config"]["p"].as_f64().unwrap() == 0.5);
}

#[test]
fn sample_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_return_config(dir.path());
    harness::run(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "replica,value,censored,steps");
    let mut replicas_seen = 0u64;
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4, "line {i}");
        assert_eq!(cols[0].parse::<u64>().unwrap(), i as u64);
        let value: u64 = cols[1].parse().unwrap();
        let censored: u8 = cols[2].parse().unwrap();
        let steps: u64 = cols[3].parse().unwrap();
        assert!(censored <= 1);
        assert_eq!(steps, value - 10, "steps past training");
        if censored == 1 {
            assert_eq!(value, cfg.cap);
        }
        replicas_seen += 1;
    }
    assert_eq!(replicas_seen, cfg.replicas);
    assert!(!text.contains('\r'), "LF line endings only");
}

#[test]
fn real_values_round_trip_17_digits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::MartingaleDiagnostics, dir.path());
    cfg.p = 0.6;
    cfg.k = KRule::Fixed(5);
    cfg.n = Some(2000);
    cfg.replicas = 3;
    cfg.seed = 1;
    let summary = harness::run(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    for (line, row) in text.lines().skip(1).zip(&summary.rows) {
        let printed: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(printed, row.value.as_f64(), "17 significant digits round-trip exactly");
    }
}

#[test]
fn reproducible_across_worker_counts() {
    let run_with_threads = |threads: usize, out: &std::path::Path| {
        let cfg = small_return_config(out);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| harness::run(&cfg)).unwrap();
        std::fs::read(out.join("samples.csv")).unwrap()
    };
    let d1 = tempfile::tempdir().unwrap();
    let d4 = tempfile::tempdir().unwrap();
    assert_eq!(
        run_with_threads(1, d1.path()),
        run_with_threads(4, d4.path()),
        "sample CSV must be byte-identical regardless of worker count"
    );
}

#[test]
fn censoring_statistics_match_oracle() {
    // p=1/2 from k=10: T/k^2 is Stable(1/2)-ish; with a cap at 40 k^2 the
    // censored fraction should be near the survival 1 - cdf(40).
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_return_config(dir.path());
    cfg.replicas = 2000;
    cfg.cap = 4000;
    cfg.seed = 3;
    let summary = harness::run(&cfg).unwrap();
    let expect = 1.0 - erw_lab::laws::stable_half_cdf(40.0f64);
    assert!(
        (summary.censoring_fraction - expect).abs() < 0.04,
        "censoring {} vs survival {expect}",
        summary.censoring_fraction
    );
}

#[test]
fn cli_simulate_reproducible_and_correct() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let path = dir.path().join(out);
        let status = bin()
            .args(["simulate", "--p", "0.7", "--k", "32", "--steps", "5000", "--seed", "9"])
            .arg("--out")
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(path.join("trajectory.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b, "same seed, byte-identical trajectory");
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,S");
    assert_eq!(text.lines().count(), 5002); // header + k..k+steps inclusive
    let first = text.lines().nth(1).unwrap();
    assert_eq!(first, "32,32");
}

#[test]
fn cli_simulate_p1_is_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["simulate", "--p", "1.0", "--k", "1", "--steps", "100", "--seed", "0"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    for line in text.lines().skip(1) {
        let (n, s) = line.split_once(',').unwrap();
        assert_eq!(n, s, "p=1 trained on +1 gives S(n)=n");
    }
}

#[test]
fn cli_exit_codes() {
    // Over-censored run: cap barely above k censors nearly everything.
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["return-times", "--p", "0.5", "--k", "100", "--replicas", "50"])
        .args(["--cap", "200", "--seed", "1"])
        .arg("--out")
        .arg(dir.path().join("oc"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "over-censored run exits 2");

    // Invalid parameter: p out of range.
    let status = bin()
        .args(["return-times", "--p", "1.5", "--k", "10", "--replicas", "5"])
        .args(["--cap", "100", "--seed", "1"])
        .arg("--out")
        .arg(dir.path().join("bad"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1), "errors exit 1");

    // Unknown flag: clap usage error, nonzero exit.
    let status = bin().args(["simulate", "--bogus", "1"]).status().unwrap();
    assert!(!status.success());
}

#[test]
fn cli_laws_diffusive_return_at_half_matches_stable_half() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["laws", "--law", "stable-half", "--grid", "0.5..8:40"],
        vec!["laws", "--law", "diffusive-return", "--p", "0.5", "--grid", "0.5..8:40"],
    ] {
        let status = bin().args(&args).arg("--out").arg(dir.path()).status().unwrap();
        assert!(status.success());
    }
    let a = std::fs::read_to_string(dir.path().join("stable-half.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("diffusive-return.csv")).unwrap();
    for (la, lb) in a.lines().skip(1).zip(b.lines().skip(1)) {
        let pa: Vec<f64> = la.split(',').map(|v| v.parse().unwrap()).collect();
        let pb: Vec<f64> = lb.split(',').map(|v| v.parse().unwrap()).collect();
        for (va, vb) in pa.iter().zip(&pb) {
            assert!((va - vb).abs() < 1e-12, "{la} vs {lb}");
        }
    }
}

#[test]
fn cli_flag_overrides_config_with_notice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "kind=ReturnTimeDiffusive\np=0.5\nk=10\nreplicas=50\ncap=100000\nseed=5\noutput_dir={}\n",
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let output = bin()
        .arg("return-times")
        .arg("--config")
        .arg(&cfg_path)
        .args(["--seed", "6"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("overrides config"), "notice logged: {stderr}");
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["seed"], serde_json::json!(6));
}

#[test]
fn cli_stdout_is_the_summary_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = bin()
        .args(["return-times", "--p", "0.5", "--k", "10", "--replicas", "20"])
        .args(["--cap", "100000", "--seed", "2"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.trim(), out.join("summary.json").to_str().unwrap());
}

#[test]
fn mean_of_simulated_positions_matches_exact_recursion() {
    // Cross-check the simulator against the independent moment oracle.
    let (mean, var) = common::exact_mean_var(0.6, 50, 5000);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::OvertrainedClt, dir.path());
    cfg.p = 0.6;
    cfg.k = KRule::Fixed(50);
    cfg.n = Some(5000);
    cfg.replicas = 4000;
    cfg.seed = 12;
    let summary = harness::run(&cfg).unwrap();
    let values: Vec<f64> = summary.rows.iter().map(|r| r.value.as_f64()).collect();
    let emp_mean = values.iter().sum::<f64>() / values.len() as f64;
    let se = (var / values.len() as f64).sqrt();
    assert!(
        (emp_mean - mean).abs() < 4.0 * se,
        "empirical mean {emp_mean} vs exact {mean} (se {se})"
    );
}

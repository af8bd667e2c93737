//! End-to-end runs of the `failprob` binary.

use std::path::Path;
use std::process::{Command, Output};

fn failprob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failprob"))
        .args(args)
        .env("FAILPROB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = failprob(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

fn column(csv: &str, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    row[i].to_string()
}

#[test]
fn toy_monte_carlo_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mc");
    ok(&[
        "run",
        "--scenario",
        "toy",
        "--method",
        "mc",
        "--n",
        "5000",
        "--param",
        "toy.threshold=2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let metrics = read(&out, "metrics.csv");
    let rate: f64 = column(&metrics, "failure_rate").parse().unwrap();
    assert!((rate - 0.0455).abs() < 0.012, "rate {rate}");
    assert_eq!(read(&out, "samples.csv").lines().count(), 5001);
    assert!(read(&out, "manifest.txt").contains("scenario=toy"));
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for (d, threads) in dirs.iter().zip(["1", "3"]) {
        let status = Command::new(env!("CARGO_BIN_EXE_failprob"))
            .args([
                "run",
                "--scenario",
                "pendulum",
                "--chains",
                "2",
                "--samples",
                "15",
                "--seed",
                "4",
            ])
            .arg("--out")
            .arg(d)
            .env("FAILPROB_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for f in ["samples.csv", "metrics.csv"] {
        assert_eq!(
            std::fs::read(dirs[0].join(f)).unwrap(),
            std::fs::read(dirs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn report_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for method in ["hmc", "pg", "mc"] {
        let dir = tmp.path().join(method);
        let mut args = vec![
            "run",
            "--scenario",
            "toy",
            "--method",
            method,
            "--chains",
            "2",
            "--samples",
            "30",
        ];
        if method == "pg" {
            args.extend(["--particles", "50"]);
        }
        args.extend(["--out", dir.to_str().unwrap()]);
        ok(&args);
        runs.push(dir);
    }
    let report = tmp.path().join("report.csv");
    let mut args = vec!["report"];
    args.extend(runs.iter().map(|r| r.to_str().unwrap()));
    args.extend(["--out", report.to_str().unwrap()]);
    let out = ok(&args);
    let table = std::fs::read_to_string(&report).unwrap();
    assert_eq!(table.lines().count(), 4);
    for m in ["hmc", "pg", "mc"] {
        assert!(
            table.contains(&format!("toy/{m}")) || table.contains(m),
            "{table}"
        );
    }
    assert!(!out.stdout.is_empty());

    // The HMC run on the toy fails often; the MC run of 60 draws never does.
    ok(&["plot", runs[0].to_str().unwrap()]);
    let svg = read(&runs[0], "trajectories.svg");
    assert!(svg.matches("<polyline").count() >= 1);
    ok(&["plot", runs[2].to_str().unwrap(), "--kind", "loglik_hist"]);
    assert!(read(&runs[2], "loglik_hist.svg").contains("no failures"));
}

#[test]
fn report_without_runs_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = failprob(&[
        "report",
        tmp.path().to_str().unwrap(),
        "--out",
        tmp.path().join("r.csv").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn invalid_arguments_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("x");
    let o = out_dir.to_str().unwrap();
    for args in [
        vec!["run", "--scenario", "toy", "--epsilon", "-1", "--out", o],
        vec![
            "run",
            "--scenario",
            "toy",
            "--param",
            "pendulum.sigma=1",
            "--out",
            o,
        ],
        vec![
            "run",
            "--scenario",
            "pendulum",
            "--param",
            "pendulum.sigma=abc",
            "--out",
            o,
        ],
        vec!["run", "--scenario", "nowhere", "--out", o],
        vec!["run", "--out", o],
    ] {
        assert!(!failprob(&args).status.success(), "{args:?} succeeded");
    }
}

#[test]
fn config_file_and_flags_merge() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "# toy sweep\nscenario=toy\nmethod=mc\nn=100\nseed=3\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "250",
        "--out",
        out.to_str().unwrap(),
    ]);
    let manifest = read(&out, "manifest.txt");
    assert!(manifest.contains("seed=3"), "{manifest}");
    assert_eq!(read(&out, "samples.csv").lines().count(), 251);
}

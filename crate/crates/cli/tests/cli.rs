use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfattn_core::io::{read_archive, read_report_provenance, CsvTable, ScenarioConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mfattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfattn"))
        .args(args)
        .env_remove("MFATTN_THREADS")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

const SMALL: [&str; 8] = [
    "--set",
    "scenario.n=20",
    "--set",
    "scenario.T=0.5",
    "--set",
    "scenario.snapshot_times=[0.0,0.5]",
    "--set",
    "scenario.N_MC=3",
];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn validate_passes() {
    let out = mfattn(&["validate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn bundled_configs_parse() {
    for name in ["ou_s2", "oscillating_s2", "oscillating_shared_s2", "jko_frozen", "gronwall", "stability"] {
        let cfg = ScenarioConfig::load(&configs().join(format!("{name}.cfg")), &[]).unwrap();
        assert_eq!(cfg.scenario.name, name);
        assert_eq!(ScenarioConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
    let ou = ScenarioConfig::load(&configs().join("ou_s2.cfg"), &[]).unwrap();
    assert_eq!((ou.scenario.n, ou.scenario.d, ou.scenario.n_mc), (300, 3, 20));
    assert_eq!(ou.heads(), vec![1, 10, 100]);
    assert_eq!((ou.scenario.dt, ou.scenario.t_final, ou.weights.sigma2), (0.01, 20.0, 1.0));
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("ou_s2.cfg");
    let out_dir = dir.path().join("run");
    let run = |seed: &str| {
        let args = with_small(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        let out = mfattn(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        ["ou_s2.traj", "ou_s2_ledger.csv"].map(|f| fs::read(out_dir.join(f)).unwrap())
    };
    let a = run("7");
    assert_eq!(a, run("7"));
    assert_ne!(a[0], run("8")[0]);

    run("7");
    let (prov, traj) = read_archive(&out_dir.join("ou_s2.traj")).unwrap();
    assert_eq!(prov.seed, 7);
    assert_eq!(traj.final_cloud().len(), 20);
    assert_eq!(*traj.times.last().unwrap(), 0.5);
}

#[test]
fn embedded_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("first");
    let cfg = configs().join("ou_s2.cfg");
    let out = mfattn(&with_small(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out.status.success());
    let table = CsvTable::read(&out_dir.join("ou_s2_ledger.csv")).unwrap();
    let echo = dir.path().join("echo.cfg");
    fs::write(&echo, &table.provenance.config).unwrap();
    let first = fs::read(out_dir.join("ou_s2_ledger.csv")).unwrap();
    let archive = fs::read(out_dir.join("ou_s2.traj")).unwrap();
    fs::remove_dir_all(&out_dir).unwrap();
    let out = mfattn(&["simulate", "--config", echo.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(out_dir.join("ou_s2_ledger.csv")).unwrap(), first);
    assert_eq!(fs::read(out_dir.join("ou_s2.traj")).unwrap(), archive);
}

#[test]
fn mc_then_fit_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("ou_s2.cfg");
    let out = mfattn(&with_small(&[
        "mc",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--baseline-samples",
        "10",
        "--threads",
        "2",
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ou_s2_report.json")).unwrap()).unwrap();
    let b_mc = report["result"]["sweep"]["fit"]["b"].as_f64().unwrap();
    assert_eq!(report["seed"], 20250101);
    assert!(report["config"].as_str().unwrap().contains("n = 20"));

    let summary = dir.path().join("ou_s2_summary.csv");
    let out = mfattn(&["fit", "--input", summary.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit_path = dir.path().join("ou_s2_summary_fit.json");
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fit_path).unwrap()).unwrap();
    assert_eq!(fit["result"]["b"].as_f64().unwrap(), b_mc);
    assert_eq!(read_report_provenance(&fit_path).unwrap().seed, 20250101);

    let series = CsvTable::read(&dir.path().join("ou_s2_series.csv")).unwrap();
    assert_eq!(series.header, ["heads", "time", "metric", "mean", "se"]);
}

#[test]
fn jko_gronwall_and_stability_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let jko = configs().join("jko_frozen.cfg");
    let out = mfattn(&["jko", "--config", jko.to_str().unwrap(), "--out", d, "--set", "scenario.T=0.2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = CsvTable::read(&dir.path().join("jko_frozen_jko.csv")).unwrap();
    assert_eq!(table.header, ["tau", "time", "w2"]);

    let g = configs().join("gronwall.cfg");
    let out = mfattn(&["gronwall", "--config", g.to_str().unwrap(), "--out", d, "--set", "scenario.T=0.5", "--set", "scenario.n=20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("gronwall_gronwall.json").exists());

    let s = configs().join("stability.cfg");
    let out = mfattn(&[
        "stability", "--config", s.to_str().unwrap(), "--out", d, "--set", "scenario.T=0.2", "--set", "scenario.n=10",
        "--set", "scenario.N_MC=2", "--set", "stability.reference_H=16", "--set", "stability.H_list=[1,4]",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = CsvTable::read(&dir.path().join("stability_stability.csv")).unwrap();
    assert_eq!(table.column("heads").unwrap(), vec![1.0, 4.0]);
}

#[test]
fn bad_configs_fail_with_json() {
    let cfg = configs().join("ou_s2.cfg");
    let c = cfg.to_str().unwrap();
    let e = error_json(&mfattn(&["simulate", "--config", c, "--set", "scenario.dt=0"]));
    assert_eq!(e["error"]["kind"], "config_value");
    assert_eq!(e["error"]["module"], "cli_io");
    assert!(e["error"]["message"].as_str().unwrap().contains("dt"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, fs::read_to_string(&cfg).unwrap().replace("N_MC = 20", "N_MC = 20\nfoo = 3")).unwrap();
    let e = error_json(&mfattn(&["simulate", "--config", bad.to_str().unwrap()]));
    assert_eq!(e["error"]["kind"], "config_parse");
    assert!(e["error"]["message"].as_str().unwrap().contains("foo"));
    assert!(e["error"]["message"].as_str().unwrap().contains("line 10"));

    let e = error_json(&mfattn(&["mc"]));
    assert_eq!(e["error"]["kind"], "usage");
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("ou_s2.cfg");
    let out = Command::new(env!("CARGO_BIN_EXE_mfattn"))
        .args(with_small(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]))
        .env("MFATTN_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_mfattn"))
        .args(["validate"])
        .env("MFATTN_THREADS", "many")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

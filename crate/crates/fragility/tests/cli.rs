//! The `fragility` binary end to end on the shipped mirror.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// A config in `dir` reading the repo mirror into a private cache.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let text = fs::read_to_string(repo().join("config/reproduce.toml")).unwrap();
    let mirror = repo().join("data/lalonde");
    let text = text
        .lines()
        .map(|l| {
            if l.starts_with("source") {
                format!("source = {:?}", mirror.display().to_string())
            } else if l.starts_with("cache_dir") {
                "cache_dir = \"cache\"".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join("run.toml");
    fs::write(&path, format!("{text}\n{extra}")).unwrap();
    path
}

fn fragility(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fragility"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stderr_record(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn dependent_command_without_upstream_names_producer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    let o = fragility(&cfg, &out, &["match"]);
    assert!(!o.status.success());
    let rec = stderr_record(&o);
    assert_eq!(rec["error"], "dependency");
    assert_eq!(rec["producer"], "fetch");

    assert!(fragility(&cfg, &out, &["fetch"]).status.success());
    let o = fragility(&cfg, &out, &["match"]);
    let rec = stderr_record(&o);
    assert_eq!(rec["error"], "dependency");
    assert_eq!(rec["producer"], "propensity");
}

#[test]
fn stale_artifact_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    for c in ["fetch", "propensity"] {
        assert!(fragility(&cfg, &out, &[c]).status.success());
    }
    let o = fragility(&cfg, &out, &["--seed", "9", "bounds"]);
    assert!(!o.status.success());
    assert_eq!(stderr_record(&o)["producer"], "propensity");
}

#[test]
fn commands_log_input_digests_and_write_stable_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[bootstrap]\nreplicates = 20\n");
    let out = dir.path().join("out");
    for c in ["fetch", "support", "propensity", "match", "bounds", "fragility", "bootstrap", "deciles", "simulate"] {
        let o = fragility(&cfg, &out, &[c]);
        assert!(o.status.success(), "{c}: {}", String::from_utf8_lossy(&o.stderr));
        let log: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(log["command"], c);
        assert!(log["inputs"]["config"].as_str().unwrap().len() == 64);
        if c != "simulate" {
            assert!(log["inputs"]["nswre74_treated.txt"].is_string(), "{c} logs data digests");
        }
    }
    let golden = [
        ("table1.csv", "sample,design,tau_hat,se,n_treated,n_control,n_treated_used,n_dropped"),
        ("designs.csv", "name,design,tau_hat,se,n_treated_used,n_dropped,error"),
        ("support_72.csv", "age_bin,age_lo,age_hi,education_bin,education_lo,education_hi,treated,control,status"),
        ("support_42.csv", "age_bin,age_lo,age_hi,education_bin,education_lo,education_hi,treated,control,status"),
        ("pscore_hist.csv", "bin,lo,hi,treated,control"),
        ("sweep_tilting.csv", "delta,lo,hi,width,contains_zero"),
        ("sweep_proxy.csv", "delta,lo,hi,width,contains_zero,trim_low,trim_high"),
        ("bootstrap.csv", "design,replicate,estimate,error"),
        ("deciles.csv", "decile,score_lo,score_hi,n_treated,n_control,att,se,dropped"),
        ("sim_sweep.csv", "delta,observed_ate,n_selected,lo,hi,contains_zero"),
    ];
    for (name, want) in golden {
        assert_eq!(header(&out.join(name)), want, "{name}");
    }
    let table1 = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(table1.lines().count(), 4);
    let sim = fs::read_to_string(out.join("sim_sweep.csv")).unwrap();
    let deltas: Vec<&str> = sim.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(deltas, ["0", "0.5", "1", "1.5", "2"]);
    for svg in ["sweep_tilting.svg", "sweep_proxy.svg", "pscore_hist.svg", "sim_sweep.svg"] {
        assert!(fs::read_to_string(out.join(svg)).unwrap().starts_with("<svg"));
    }
}

#[test]
fn single_delta_sweep_is_the_mar_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[bounds]\ndeltas = [0.0]\n");
    let out = dir.path().join("out");
    for c in ["fetch", "propensity", "bounds"] {
        assert!(fragility(&cfg, &out, &[c]).status.success());
    }
    let sweep = fs::read_to_string(out.join("sweep_tilting.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let fields: Vec<f64> = rows[0].split(',').take(3).map(|v| v.parse().unwrap()).collect();
    let bounds: Value = serde_json::from_str(&fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    let mar = bounds["body"]["mar_point"].as_f64().unwrap();
    assert_eq!(fields[1], mar);
    assert_eq!(fields[2], mar);
}

#[test]
fn offline_cold_cache_fails_at_fetch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let o = fragility(&cfg, &dir.path().join("out"), &["--offline", "reproduce"]);
    assert!(!o.status.success());
    let rec = stderr_record(&o);
    assert_eq!(rec["stage"], "fetch");
    assert_eq!(rec["error"], "fetch");
}

#[test]
fn unreachable_source_with_cold_cache_fails_at_fetch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap();
    let text = text
        .lines()
        .map(|l| if l.starts_with("source") { "source = \"no-such-mirror\"" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&cfg, text).unwrap();
    let o = fragility(&cfg, &dir.path().join("out"), &["reproduce"]);
    assert!(!o.status.success());
    assert_eq!(stderr_record(&o)["stage"], "fetch");
}

#[test]
fn config_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[bootstrap]\nreplicats = 5\n");
    let o = fragility(&cfg, &dir.path().join("out"), &["simulate"]);
    assert!(!o.status.success());
    assert_eq!(stderr_record(&o)["error"], "config");

    let missing = dir.path().join("absent.toml");
    let o = fragility(&missing, &dir.path().join("out"), &["simulate"]);
    assert_eq!(stderr_record(&o)["error"], "io");
}

#[test]
fn tampered_cache_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = dir.path().join("out");
    assert!(fragility(&cfg, &out, &["fetch"]).status.success());
    let cached = dir.path().join("cache/psid_controls.txt");
    let mut text = fs::read_to_string(&cached).unwrap();
    text.push_str("0 30 12 0 0 1 0 0.0 0.0 100.0\n");
    fs::write(&cached, text).unwrap();
    let o = fragility(&cfg, &out, &["support"]);
    assert_eq!(stderr_record(&o)["error"], "integrity");
}

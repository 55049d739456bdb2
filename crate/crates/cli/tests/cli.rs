use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlslab::config::RunConfig;
use serde_json::Value;

fn nlslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlslab")).args(args).arg("--quiet").output().expect("binary runs")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = r#"
[problem]
dim = 1
p = 2.0

[grid]
L = 16.0
n = 128

[damping]
kind = "saturating"
lambda = 0.3

[initial]
family = "gaussian"
amplitude = 1.0

[integrator]
t_end = 0.5
frames = 20
"#;

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn simulate_completed_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = nlslab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--frames", "10"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["diagnostics.csv", "summary.json", "snapshot_initial.bin", "snapshot_final.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let s = summary(&out);
    assert_eq!(s["classification"], "completed");
    let csv = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,M,E,I,K,V,P,H,grad2,bmf");
    assert_eq!(csv.lines().count(), 1 + 11);

    // The echo re-parses to the configuration that ran, including the --frames override.
    let echoed = RunConfig::from_echo(s["config"].clone()).unwrap();
    let mut expected = RunConfig::from_path(&cfg).unwrap();
    expected.integrator.frames = 10;
    assert_eq!(echoed, expected);
}

#[test]
fn simulate_blow0_config_exits_10() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let res = nlslab(&["simulate", "--config", repo_config("blow0.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 10, "{}", String::from_utf8_lossy(&res.stderr));
    let s = summary(&out);
    assert_eq!(s["classification"], "blowup-detected");
    let t = s["blowup"]["t_detect"].as_f64().unwrap();
    assert!(t > 0.0 && t < 0.35);
    assert!(out.join("snapshot_blowup.bin").exists());
}

#[test]
fn simulate_unresolved_collapse_exits_11() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(repo_config("blow0.toml")).unwrap().replace("L = 5.0", "L = 8.0");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("r");
    let res = nlslab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 11, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(summary(&out)["classification"], "resolution-lost");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("p = 2.0", "p = 0.5"));
    let res = nlslab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("p > 1"));

    let cfg = write_config(dir.path(), &SMALL.replace("amplitude = 1.0", "amplitude = 1.0\namplitde = 2.0"));
    let res = nlslab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("amplitde"));

    let res = nlslab(&["criteria", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&res), 2);
}

fn criteria_json(text: &str) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), text);
    let res = nlslab(&["criteria", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    serde_json::from_slice(&res.stdout).unwrap()
}

fn verdict<'a>(doc: &'a Value, theorem: &str) -> &'a Value {
    doc["verdicts"].as_array().unwrap().iter().find(|v| v["theorem"] == theorem).unwrap()
}

fn hypothesis<'a>(v: &'a Value, name: &str) -> &'a Value {
    v["hypotheses"].as_array().unwrap().iter().find(|h| h["name"] == name).unwrap()
}

#[test]
fn criteria_blow0_config_holds_with_finite_bound() {
    let text = std::fs::read_to_string(repo_config("blow0.toml")).unwrap();
    let doc = criteria_json(&text);
    let v = verdict(&doc, "Blow0");
    assert!(v["hypotheses"].as_array().unwrap().iter().all(|h| h["holds"] == true), "{v}");
    assert!(v["bounds"]["lifespan"].as_f64().unwrap().is_finite());
}

#[test]
fn criteria_real_datum_fails_negative_virial() {
    let text = SMALL.replace("dim = 1", "dim = 2").replace("p = 2.0", "p = 4.0").replace("n = 128", "n = 64");
    let doc = criteria_json(&text);
    let h = hypothesis(verdict(&doc, "Blow0"), "V(u0) < 0");
    assert_eq!(h["holds"], false);
    assert!(h["value"].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn criteria_reports_three_dimensional_exponents() {
    let text = SMALL.replace("dim = 1", "dim = 3").replace("p = 2.0", "p = 3.0").replace("n = 128", "n = 16");
    let doc = criteria_json(&text);
    assert_eq!(doc["kappa"], 1.0);
    assert_eq!(doc["theta"], 8.0);
    assert_eq!(verdict(&doc, "GE")["thresholds"]["theta"], 8.0);
    assert_eq!(verdict(&doc, "Blow0")["thresholds"]["kappa"], 1.0);
}

#[test]
fn verify_benchmark_passes() {
    let dir = tempfile::tempdir().unwrap();
    let res = nlslab(&["verify", "--config", repo_config("identity_benchmark.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let text = String::from_utf8_lossy(&res.stdout);
    for name in ["energy", "variance", "virial", "hamiltonian-rate", "second-virial"] {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        assert!(line.ends_with("ok"), "{line}");
    }
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn sweep_without_bracket_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[sweep]\nmode = \"bisect\"\na_lo = 0.0\na_hi = 1.0\nrel_tol = 0.05\n",
        SMALL.replace("dim = 1", "dim = 2").replace("n = 128", "n = 32").replace("L = 16.0", "L = 8.0")
    );
    let cfg = write_config(dir.path(), &text);
    let res = nlslab(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bracket"));
}

#[test]
fn grid_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[sweep]\nmode = \"grid\"\nvalues = [0.5, 0.0, 1.0]\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("s");
    let res = nlslab(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, ["param,classification,t_detect", "0,completed,0.5", "0.5,completed,0.5", "1,completed,0.5"]);
}

#[test]
fn damping_info_prints_spike_moments() {
    let res = nlslab(&["damping-info", "--config", repo_config("spike_damping.toml").to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let text = String::from_utf8_lossy(&res.stdout);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter_map(|l| {
            let cols: Vec<f64> = l.split_whitespace().filter_map(|c| c.parse().ok()).collect();
            (cols.len() == 5).then_some(cols)
        })
        .collect();
    assert_eq!(rows.len(), 30);
    for r in rows {
        let (n, q) = (r[0], r[1]);
        let expected = 2f64.powf(2.0 * q - 1.0) / (q + 1.0) * n.powf(q - 2.0);
        assert!((r[2] - expected).abs() <= 1e-9 * expected, "{r:?}");
    }
}

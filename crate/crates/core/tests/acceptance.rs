//! Acceptance suite: one pass/fail line per criterion.
//!
//! Each criterion runs through the audit pipeline; criteria 1 and 12 are
//! also exercised end to end through the binary.

use std::path::Path;
use std::process::Command;

use pulsefront::audit::{run_criterion, AuditRow, N_CRITERIA};

const CONSTANT_CONFIG: &str = r#"
periods = { T = 1.0, L = 1.0 }
grid = { nt = 32, nx = 32 }
diffusion = { kind = "constant", value = 1.2 }
drift = { kind = "constant", value = 0.5 }

[reaction]
family = "heterogeneous_logistic"
params = { mu = { kind = "constant", value = 1.5 } }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pulsefront"))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// `k` from `eigen --refine 2` against `q lambda - a lambda^2 - mu`.
fn cli_closed_form(dir: &Path) -> (bool, String) {
    let cfg = dir.join("constant.toml");
    std::fs::write(&cfg, CONSTANT_CONFIG).unwrap();
    let (a, q, mu) = (1.2, 0.5, 1.5);
    let mut worst: f64 = 0.0;
    for (n, lambda) in [0.0, 0.5, 1.0, 2.0].iter().enumerate() {
        let out = dir.join(format!("eigen{n}"));
        let st = bin()
            .args(["--config", cfg.to_str().unwrap(), "--refine", "2", "--out", out.to_str().unwrap()])
            .args(["eigen", "--lambda", &lambda.to_string()])
            .output()
            .unwrap();
        if !st.status.success() {
            return (false, String::from_utf8_lossy(&st.stderr).into_owned());
        }
        let k = json(&out.join("summary.json"))["k"].as_f64().unwrap();
        let exact = q * lambda - a * lambda * lambda - mu;
        worst = worst.max((k - exact).abs() / exact.abs());
    }
    (worst <= 1e-6, format!("cli rel error {worst:.3e}"))
}

/// Two `audit` runs with the same manifest give byte-identical CSVs.
fn cli_determinism(dir: &Path) -> (bool, String) {
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(format!("audit_{run}"));
        let st = bin().args(["--seed", "7", "--out", out.to_str().unwrap(), "audit"]).output().unwrap();
        if st.status.code() != Some(0) {
            return (false, format!("audit exit {:?}", st.status.code()));
        }
        csvs.push(std::fs::read(out.join("audit.csv")).unwrap());
    }
    (csvs[0] == csvs[1], format!("audit.csv {} bytes", csvs[0].len()))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows: Vec<AuditRow> = (1..=N_CRITERIA).map(|id| run_criterion(id, 7)).collect();

    let (ok, note) = cli_closed_form(dir.path());
    rows[0].passed &= ok;
    rows[0].detail = format!("{}; {note}", rows[0].detail);

    let (ok, note) = cli_determinism(dir.path());
    rows[11].passed &= ok;
    rows[11].detail = format!("{}; {note}", rows[11].detail);

    for r in &rows {
        println!("{} ({:.1}s)", r.line(), r.seconds);
    }
    let failed: Vec<usize> = rows.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{} of {} criteria passed", N_CRITERIA - failed.len(), N_CRITERIA);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

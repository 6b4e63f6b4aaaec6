//! Run manifests, CSV emission and JSON summaries.
//!
//! CSV floats carry 17 significant digits so equal runs give equal bytes and
//! values round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_path: Option<String>,
    pub command: String,
    /// Merged configuration and command options.
    pub parameters: Value,
    pub seed: u64,
    pub refine: u32,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(config_path: Option<&Path>, command: &str, parameters: Value, seed: u64, refine: u32) -> Self {
        Self {
            config_path: config_path.map(|p| p.display().to_string()),
            command: command.to_string(),
            parameters,
            seed,
            refine,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV table with a fixed header; cells are preformatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

/// Writes `summary.json` (with the manifest under `"manifest"`) and each
/// table as `<name>.csv` into `out_dir`. Returns the written paths.
pub fn write_outputs<T: Serialize>(
    out_dir: &Path,
    manifest: &RunManifest,
    summary: &T,
    tables: &[(&str, Table)],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut obj = match serde_json::to_value(summary).map_err(|e| Error::Numerical(e.to_string()))? {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    obj.insert("manifest".into(), serde_json::to_value(manifest).map_err(|e| Error::Numerical(e.to_string()))?);
    let mut written = Vec::new();
    let path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    written.push(path);
    for (name, table) in tables {
        let path = out_dir.join(format!("{name}.csv"));
        fs::write(&path, table.render())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_render() {
        let mut t = Table::new(&["lambda", "k"]);
        t.push(vec![fmt_f64(0.5), fmt_f64(-1.25)]);
        assert_eq!(t.render(), "lambda,k\n5.0000000000000000e-1,-1.2500000000000000e0\n");
    }

    #[test]
    fn summary_carries_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(None, "speed", serde_json::json!({"eps": 0.0}), 7, 0);
        let files = write_outputs(dir.path(), &m, &serde_json::json!({"c_star": 2.0}), &[]).unwrap();
        assert_eq!(files.len(), 1);
        let v: Value = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(v["manifest"]["seed"], 7);
        assert_eq!(v["c_star"], 2.0);
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}

//! CSV/JSON emission with a manifest-first protocol: the manifest (config
//! echo, seed, version, per-file checksums) is renamed into place before any
//! data file is, so a manifest always describes exactly the bytes on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: &str = "dfl-csv/1";

/// One tidy table: named columns over float rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// 17 significant digits: round-trips every f64 exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_csv(table: &Table) -> String {
    let mut out = String::new();
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for row in &table.rows {
        let line: Vec<String> = row.iter().map(|x| format_float(*x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Everything one scenario run produces, still in memory.
#[derive(Debug)]
pub struct ScenarioOutput {
    pub scenario: &'static str,
    pub tables: Vec<Table>,
    pub summary: Value,
    pub warnings: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write manifest.json first (atomically), then the data files it describes.
/// Returns the paths written, manifest first.
pub fn write_outputs(
    dir: &Path,
    output: &ScenarioOutput,
    effective_config: &BTreeMap<String, String>,
    master_seed: u64,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;

    let mut files: Vec<(String, String)> = Vec::new();
    for table in &output.tables {
        files.push((format!("{}.csv", table.name), render_csv(table)));
    }
    let mut summary_text = serde_json::to_string_pretty(&output.summary)
        .map_err(|e| CliError::Numeric(format!("summary serialization failed: {e}")))?;
    summary_text.push('\n');
    files.push(("summary.json".to_string(), summary_text));

    let mut checksums = serde_json::Map::new();
    for (name, text) in &files {
        checksums.insert(
            name.clone(),
            json!({ "sha256": sha256_hex(text.as_bytes()), "bytes": text.len() }),
        );
    }
    let config_echo: serde_json::Map<String, Value> = effective_config
        .iter()
        .map(|(k, v)| (k.clone(), Value::String(v.clone())))
        .collect();
    let manifest = json!({
        "schema": SCHEMA_VERSION,
        "scenario": output.scenario,
        "version": env!("CARGO_PKG_VERSION"),
        "master_seed": master_seed,
        "config": Value::Object(config_echo),
        "outputs": Value::Object(checksums),
    });
    let mut manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Numeric(format!("manifest serialization failed: {e}")))?;
    manifest_text.push('\n');

    let manifest_path = dir.join("manifest.json");
    write_atomic(&manifest_path, manifest_text.as_bytes())?;

    let mut written = vec![manifest_path];
    for (name, text) in &files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Stable sub-seed for one unit of work under one master seed.
pub fn derive_seed(master_seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_roundtrips() {
        for x in [0.1, 1.0 / 3.0, 2.0_f64.powi(-40), 123456789.123456789, -0.0] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn csv_has_header_and_full_rows() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec![1.0, 2.0]);
        let text = render_csv(&t);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "a,b");
        assert_eq!(lines.next().unwrap().split(',').count(), 2);
        assert_eq!(t.column("b").unwrap(), vec![2.0]);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, "op:0");
        assert_eq!(a, derive_seed(7, "op:0"));
        assert_ne!(a, derive_seed(7, "op:1"));
        assert_ne!(a, derive_seed(8, "op:0"));
    }
}

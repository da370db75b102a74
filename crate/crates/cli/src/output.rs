//! Artifacts of one run: CSV tables, the JSON report and the manifest.
//!
//! Everything except the manifest's `timestamp_unix` and `wall_time_s` is a
//! function of the resolved config, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use mfred_core::ode::fmt_f64;
use mfred_core::verify::CheckReport;

/// Manifest fields that legitimately differ between reruns.
pub const VOLATILE_FIELDS: [&str; 2] = ["timestamp_unix", "wall_time_s"];

/// A CSV table held in memory until the run finishes.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        self.rows.push(values.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn push_cells(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().context("flushing csv buffer")
    }
}

/// What a task hands back to the runner.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<CheckReport>,
    pub summary: serde_json::Map<String, Value>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

#[derive(Serialize)]
struct Report<'a> {
    task: &'a str,
    model: &'a str,
    pass: bool,
    checks: &'a [CheckReport],
    summary: &'a serde_json::Map<String, Value>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    task: &'a str,
    model: &'a str,
    seed: u64,
    config: &'a Value,
    versions: Versions,
    files: Vec<String>,
    pass: bool,
    timestamp_unix: u64,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct Versions {
    mfred: &'static str,
    format: u32,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct RunInfo<'a> {
    pub task: &'a str,
    pub model: &'a str,
    pub seed: u64,
    pub config: &'a Value,
    pub wall_time_s: f64,
}

/// Writes `<table>.csv`, `report.json` and `manifest.json` into `dir`.
pub fn write_all(dir: &Path, info: &RunInfo<'_>, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    for t in &outcome.tables {
        let name = format!("{}.csv", t.name);
        let path = dir.join(&name);
        std::fs::write(&path, t.to_bytes()?).with_context(|| format!("writing {}", path.display()))?;
        files.push(name);
    }
    let report = Report {
        task: info.task,
        model: info.model,
        pass: outcome.passed(),
        checks: &outcome.checks,
        summary: &outcome.summary,
    };
    write_json(&dir.join("report.json"), &report)?;
    files.push("report.json".into());
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        task: info.task,
        model: info.model,
        seed: info.seed,
        config: info.config,
        versions: Versions {
            mfred: env!("CARGO_PKG_VERSION"),
            format: 1,
        },
        files: files.clone(),
        pass: outcome.passed(),
        timestamp_unix,
        wall_time_s: info.wall_time_s,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    files.push("manifest.json".into());
    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}

/// Manifest JSON with the volatile fields removed.
pub fn stable_manifest(text: &str) -> Result<Value> {
    let mut v: Value = serde_json::from_str(text)?;
    if let Value::Object(m) = &mut v {
        for k in VOLATILE_FIELDS {
            m.remove(k);
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_newlines_and_round_trip_floats() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(&[0.1, 1e-300]);
        t.push(&[-2.0, f64::MAX]);
        let text = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(text, "a,b\n0.1,1e-300\n-2.0,1.7976931348623157e308\n");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn stable_manifest_drops_clock_fields() {
        let v = stable_manifest(r#"{"seed": 1, "timestamp_unix": 5, "wall_time_s": 0.1}"#).unwrap();
        assert_eq!(v, serde_json::json!({"seed": 1}));
    }
}

//! CSV and manifest emission. Everything is rendered in memory first and
//! written to temporary files that are renamed only once all of them
//! succeeded, so a failed run leaves no partial outputs behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ScenarioConfig, Sweep};
use crate::error::SimError;
use crate::scenarios::Table;

pub const MANIFEST_FILE: &str = "manifest.json";

/// CSV with a header row and every value printed with 17 significant digits.
pub fn render_csv(table: &Table) -> Result<Vec<u8>, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns).map_err(csv_error)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| SimError::Io(e.into_error()))
}

fn csv_error(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}

#[derive(Debug, Serialize)]
struct OutputEntry<'a> {
    file: String,
    columns: &'a [String],
    rows: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    format_version: u32,
    scenario: &'a str,
    seed: u64,
    params: &'a std::collections::BTreeMap<String, f64>,
    sweep: &'a Option<Sweep>,
    outputs: Vec<OutputEntry<'a>>,
}

pub fn render_manifest(cfg: &ScenarioConfig, tables: &[Table]) -> Result<Vec<u8>, SimError> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        format_version: cfg.format_version,
        scenario: cfg.scenario.name(),
        seed: cfg.seed,
        params: &cfg.params,
        sweep: &cfg.sweep,
        outputs: tables.iter().map(|t| OutputEntry { file: format!("{}.csv", t.name), columns: &t.columns, rows: t.rows.len() }).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| SimError::Io(e.into()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write every table and the manifest into `cfg.output_dir`; returns the
/// written paths.
pub fn write_outputs(cfg: &ScenarioConfig, tables: &[Table]) -> Result<Vec<PathBuf>, SimError> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for t in tables {
        files.push((format!("{}.csv", t.name), render_csv(t)?));
    }
    files.push((MANIFEST_FILE.to_string(), render_manifest(cfg, tables)?));
    write_atomically(&cfg.output_dir, &files)
}

fn write_atomically(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    let result = (|| {
        for (name, bytes) in files {
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push(tmp.clone());
            fs::write(&tmp, bytes)?;
        }
        let mut done = Vec::new();
        for ((name, _), tmp) in files.iter().zip(&staged) {
            let target = dir.join(name);
            fs::rename(tmp, &target)?;
            done.push(target);
        }
        Ok(done)
    })();
    if result.is_err() {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
    }
    result
}

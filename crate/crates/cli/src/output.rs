//! CSV tables, the JSON report and the run manifest.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// `{:.16e}`: 17 significant digits, enough to read every `f64` back exactly.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `columns` side by side under `headers`; all columns have one
/// entry per row.
pub fn emit_csv(path: &Path, headers: &[String], columns: &[&[f64]]) -> Result<(), CliError> {
    assert_eq!(headers.len(), columns.len(), "one header per column");
    let rows = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == rows), "ragged columns");
    let io = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(headers).map_err(io)?;
    for r in 0..rows {
        w.write_record(columns.iter().map(|c| format_value(c[r]))).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a file written by [`emit_csv`] back into headers and columns.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let io = |e: csv::Error| CliError::io(path, e.into());
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let headers: Vec<String> = r.headers().map_err(io)?.iter().map(String::from).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for record in r.records() {
        let record = record.map_err(io)?;
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            let v = field
                .parse()
                .map_err(|_| CliError::Config(format!("{}: bad number {field:?}", path.display())))?;
            col.push(v);
        }
    }
    Ok((headers, columns))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// Hex SHA-256 of the configuration file as read.
    pub config_sha256: String,
    pub seed: u64,
    pub mode: String,
    pub threads: usize,
    pub files: Vec<String>,
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

//! CSV tables and the `<out>.meta.json` companion file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::sig12;

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => sig12(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

/// Rows under a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &[&'static str] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch {
                expected: self.header.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    /// Numeric values of one column.
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        match self.column(name) {
            Some(c) => self.rows.iter().filter_map(|r| r[c].as_f64()).collect(),
            None => Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Scheduled, emitted and skipped row counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RowAccounting {
    pub scheduled: usize,
    pub emitted: usize,
    pub skipped: usize,
    /// Skip reasons with counts.
    pub skipped_reasons: BTreeMap<String, usize>,
}

impl RowAccounting {
    pub fn skip(&mut self, reason: impl Into<String>) {
        self.skipped += 1;
        *self.skipped_reasons.entry(reason.into()).or_default() += 1;
    }

    pub fn balanced(&self) -> bool {
        self.scheduled == self.emitted + self.skipped
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub git_describe: String,
    pub paper_scale: bool,
    pub config: serde_json::Value,
    pub rows: RowAccounting,
    pub summary: serde_json::Value,
}

impl RunMeta {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `<out>.meta.json` next to `out`.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

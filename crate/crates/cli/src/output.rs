use std::fmt::Write as _;
use std::path::Path;

use lyapsens_core::matrix_csv::format_f64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A file produced by a run, held in memory until every computation succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// A CSV cell: floats get 17 significant digits, everything else is printed as is.
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::F)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format_f64(*v),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

pub struct Table {
    name: String,
    body: String,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            body: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        let _ = writeln!(self.body, "{}", line.join(","));
    }

    pub fn finish(self) -> OutputFile {
        OutputFile {
            name: format!("{}.csv", self.name),
            contents: self.body,
        }
    }
}

/// An `(x, y)` series for external plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn new(name: &str, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            points,
        }
    }
}

/// One two-column CSV per series, named `plot_<name>.csv`. An empty series
/// still yields its header line.
pub fn emit_plot_data(series: &[PlotSeries]) -> Vec<OutputFile> {
    series
        .iter()
        .map(|s| {
            let mut t = Table::new(&format!("plot_{}", s.name), &[&s.x_label, &s.y_label]);
            for (x, y) in &s.points {
                t.row(vec![(*x).into(), (*y).into()]);
            }
            t.finish()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub kind: String,
    pub seed: u64,
    /// SHA-256 of the effective config (after overrides, excluding the output directory).
    pub config_hash: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub outputs: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest(files: &[OutputFile]) -> Vec<ManifestEntry> {
    files
        .iter()
        .map(|f| ManifestEntry {
            file: f.name.clone(),
            bytes: f.contents.len(),
            sha256: sha256_hex(f.contents.as_bytes()),
        })
        .collect()
}

pub fn write_files(dir: &Path, files: &[OutputFile]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    for f in files {
        let path = dir.join(&f.name);
        std::fs::write(&path, &f.contents)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

//! On-disk layout. One directory per (scenario name, seed):
//!
//! ```text
//! <out>/<name>-seed<seed>/
//!     effective_config.toml   merged configuration
//!     metrics.json            raw report, the source for everything below
//!     report.csv              per-node counters
//!     summary.txt             plain-text summary
//!     row.csv                 sweep cells only: this cell's grid row
//! ```
//!
//! A sweep writes `<out>/<name>-sweep-seed<seed>/` holding its
//! `effective_config.toml`, `grid.csv` and a `cells/` directory of run
//! directories, one per grid cell.

use std::fs;
use std::path::{Path, PathBuf};

use super::CliError;
use crate::metrics::MetricsReport;
use crate::netsim::SweepRow;

pub const METRICS: &str = "metrics.json";
pub const ROW: &str = "row.csv";
pub const GRID: &str = "grid.csv";
pub const CELLS: &str = "cells";

pub fn run_dir(out: &Path, name: &str, seed: u64) -> PathBuf {
    out.join(format!("{name}-seed{seed}"))
}

pub fn sweep_dir(out: &Path, name: &str, seed: u64) -> PathBuf {
    out.join(format!("{name}-sweep-seed{seed}"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Creates `dir`. Failure here is a configuration problem (bad `--out`).
pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("output directory `{}`: {e}", dir.display())))
}

/// Stores the raw report and renders the derived files from it.
pub fn store(dir: &Path, report: &MetricsReport, effective_toml: &str) -> Result<(), CliError> {
    write(&dir.join("effective_config.toml"), effective_toml)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write(&dir.join(METRICS), json + "\n")?;
    render(dir).map(|_| ())
}

pub fn read_report(dir: &Path) -> Result<MetricsReport, CliError> {
    let path = dir.join(METRICS);
    let src = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&src).map_err(|e| io_err(&path, e))
}

/// Rewrites `report.csv` and `summary.txt` from `metrics.json`.
pub fn render(dir: &Path) -> Result<MetricsReport, CliError> {
    let report = read_report(dir)?;
    write(&dir.join("report.csv"), report.to_csv())?;
    write(&dir.join("summary.txt"), report.summary())?;
    Ok(report)
}

pub fn rows_csv(rows: &[SweepRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))
}

/// Rebuilds `grid.csv` from the cells' rows, ordered by managers then load.
pub fn assemble_grid(sweep_dir: &Path) -> Result<usize, CliError> {
    let cells = sweep_dir.join(CELLS);
    let mut rows = Vec::new();
    for dir in subdirs(&cells)? {
        let row = dir.join(ROW);
        if row.is_file() {
            rows.extend(read_rows(&row)?);
        }
    }
    rows.sort_by(|a, b| (a.managers, a.load_tps).partial_cmp(&(b.managers, b.load_tps)).unwrap());
    write(&sweep_dir.join(GRID), rows_csv(&rows))?;
    Ok(rows.len())
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Run directories and sweep directories under `root`, itself included.
pub fn discover(root: &Path) -> Result<(Vec<PathBuf>, Vec<PathBuf>), CliError> {
    let (mut runs, mut sweeps) = (Vec::new(), Vec::new());
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(METRICS).is_file() {
            runs.push(dir.clone());
        }
        if dir.join(CELLS).is_dir() {
            sweeps.push(dir.clone());
        }
        stack.extend(subdirs(&dir)?);
    }
    runs.sort();
    sweeps.sort();
    Ok((runs, sweeps))
}

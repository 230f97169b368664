//! CSV artifacts. Numbers are written with 17 significant digits so that
//! every value round-trips exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pointdn::grid::{BoundaryData, Grid, ScalarField};

use crate::CliError;

/// `{:.16e}`: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header and rows of preformatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .flush()
        .map_err(|e| io_err(path, e))
}

/// `x,y,value` for every node in storage order.
pub fn write_field(path: &Path, grid: &Grid, u: &ScalarField) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = (0..grid.node_count())
        .map(|k| {
            let (i, j) = grid.ij(k);
            let (x, y) = grid.coords(i, j);
            vec![num(x), num(y), num(u.values()[k])]
        })
        .collect();
    write_table(path, &["x", "y", "value"], &rows)
}

/// `s,value` for every boundary node, `s` the perimeter arclength.
pub fn write_boundary(path: &Path, grid: &Grid, values: &[f64]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> =
        values.iter().enumerate().map(|(b, &v)| vec![num(grid.boundary_param(b)), num(v)]).collect();
    write_table(path, &["s", "value"], &rows)
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(|s| s.trim().to_string()).collect();
    if found != header {
        return Err(CliError::Config(format!("{}: expected header {}, found {}", path.display(), header.join(","), found.join(","))));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            rec.iter()
                .map(|c| c.trim().parse::<f64>().map_err(|e| CliError::Config(format!("{}: `{c}`: {e}", path.display()))))
                .collect()
        })
        .collect()
}

/// Snaps a coordinate to its grid index.
fn snap(t: f64, h: f64, limit: usize) -> Option<usize> {
    let k = (t / h).round();
    ((t / h - k).abs() < 1e-6 && k >= 0.0 && (k as usize) < limit).then_some(k as usize)
}

/// Reads `x,y,value` rows covering every node of `grid` exactly once.
pub fn read_field(path: &Path, grid: &Grid) -> Result<ScalarField, CliError> {
    let rows = read_rows(path, &["x", "y", "value"])?;
    let mut values = vec![f64::NAN; grid.node_count()];
    for row in &rows {
        let (i, j) = match (snap(row[0], grid.h(), grid.n()), snap(row[1], grid.h(), grid.n())) {
            (Some(i), Some(j)) => (i, j),
            _ => return Err(off_grid(path, grid, row)),
        };
        values[grid.node(i, j)] = row[2];
    }
    if rows.len() != grid.node_count() || values.iter().any(|v| v.is_nan()) {
        return Err(CliError::Config(format!(
            "{}: {} rows do not cover the {} nodes of the n = {} grid",
            path.display(),
            rows.len(),
            grid.node_count(),
            grid.n()
        )));
    }
    Ok(ScalarField::from_values(grid, values)?)
}

/// Reads `s,value` rows covering every boundary node of `grid` exactly once.
pub fn read_boundary(path: &Path, grid: &Grid) -> Result<Vec<f64>, CliError> {
    let rows = read_rows(path, &["s", "value"])?;
    let mut values = vec![f64::NAN; grid.boundary_count()];
    for row in &rows {
        let b = snap(row[0], grid.h(), grid.boundary_count()).ok_or_else(|| off_grid(path, grid, row))?;
        values[b] = row[1];
    }
    if rows.len() != grid.boundary_count() || values.iter().any(|v| v.is_nan()) {
        return Err(CliError::Config(format!(
            "{}: {} rows do not cover the {} boundary nodes of the n = {} grid",
            path.display(),
            rows.len(),
            grid.boundary_count(),
            grid.n()
        )));
    }
    Ok(values)
}

pub fn read_boundary_data(path: &Path, grid: &Grid) -> Result<BoundaryData, CliError> {
    Ok(BoundaryData::full(grid, read_boundary(path, grid)?)?)
}

fn off_grid(path: &Path, grid: &Grid, row: &[f64]) -> CliError {
    CliError::Config(format!("{}: row {row:?} is not a node of the n = {} grid", path.display(), grid.n()))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

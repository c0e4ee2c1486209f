//! CSV persistence for matrices and vectors.
//!
//! A matrix file holds one CSV row per matrix row with no header. Its block
//! layout lives in a sidecar JSON descriptor `{"m": .., "n": .., "p": ..}`
//! next to it, at the same path with a `.json` extension.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::block::{BlockStructure, SensingMatrix};
use crate::error::{Error, Result};

/// Contents of the sidecar descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDescriptor {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Reads a headerless numeric CSV into rows.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("{}: row {}, column {}: bad number {field:?}", path.display(), r + 1, c + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        // `{}` on f64 prints the shortest string that round-trips
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_descriptor(path: &Path) -> Result<MatrixDescriptor> {
    let text = fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a matrix and its sidecar. When the sidecar is missing, `block_size`
/// supplies `n` and `p` is inferred from the column count.
pub fn read_matrix(path: &Path, block_size: Option<usize>) -> Result<SensingMatrix> {
    let rows = read_rows(path)?;
    let m = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if m == 0 || cols == 0 {
        return Err(Error::Parse(format!("{}: empty matrix", path.display())));
    }
    if let Some(r) = rows.iter().position(|row| row.len() != cols) {
        return Err(Error::Parse(format!(
            "{}: row {} has {} entries, expected {cols}",
            path.display(),
            r + 1,
            rows[r].len()
        )));
    }
    let structure = match (sidecar_path(path).exists(), block_size) {
        (true, _) => {
            let d = read_descriptor(path)?;
            if d.m != m || d.n * d.p != cols {
                return Err(Error::DimensionMismatch(format!(
                    "descriptor {{m: {}, n: {}, p: {}}} does not match the {m}x{cols} data in {}",
                    d.m,
                    d.n,
                    d.p,
                    path.display()
                )));
            }
            if block_size.is_some_and(|n| n != d.n) {
                return Err(Error::InvalidArgument(format!(
                    "block size {} conflicts with n = {} in the descriptor",
                    block_size.unwrap_or_default(),
                    d.n
                )));
            }
            BlockStructure::new(d.n, d.p)?
        }
        (false, Some(n)) => {
            if n == 0 || cols % n != 0 {
                return Err(Error::DimensionMismatch(format!("{cols} columns are not a multiple of n = {n}")));
            }
            BlockStructure::new(n, cols / n)?
        }
        (false, None) => {
            return Err(Error::InvalidArgument(format!(
                "missing descriptor {} and no block size given",
                sidecar_path(path).display()
            )))
        }
    };
    let entries: Vec<f64> = rows.into_iter().flatten().collect();
    SensingMatrix::from_row_slice(structure, m, &entries)
}

/// Writes the matrix CSV and its sidecar descriptor.
pub fn write_matrix(path: &Path, a: &SensingMatrix) -> Result<()> {
    let s = a.structure();
    let data = a.matrix();
    let rows: Vec<Vec<f64>> = (0..data.nrows()).map(|i| data.row(i).iter().copied().collect()).collect();
    write_rows(path, rows.iter().map(Vec::as_slice))?;
    let descriptor = MatrixDescriptor { m: a.rows(), n: s.n(), p: s.p() };
    fs::write(sidecar_path(path), serde_json::to_string(&descriptor)? + "\n")?;
    Ok(())
}

/// Reads a vector stored either as one column or as a single row.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let rows = read_rows(path)?;
    let single_column = rows.iter().all(|r| r.len() == 1);
    if !(single_column || rows.len() == 1) {
        return Err(Error::Parse(format!("{}: expected a single row or column", path.display())));
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(Error::Parse(format!("{}: empty vector", path.display())));
    }
    Ok(DVector::from_vec(values))
}

/// Writes a vector as a single column.
pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    let rows: Vec<[f64; 1]> = v.iter().map(|&x| [x]).collect();
    write_rows(path, rows.iter().map(|r| r.as_slice()))
}

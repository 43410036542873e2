//! Serialization of grid functions and defect traces.
//!
//! Fields are written either as CSV rows `(cell_index, value)` or as a flat
//! little-endian `f64` array in cell order. Neither format carries the grid;
//! readers take it from the caller and check the length.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::geometry::Grid;
use crate::pipeline::write_atomic;

#[derive(Debug, Serialize, Deserialize)]
struct CellValue {
    cell_index: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DefectRow {
    step: usize,
    defect: f64,
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn field_to_csv(u: &GridFunction) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (cell_index, &value) in u.values().iter().enumerate() {
        w.serialize(CellValue { cell_index, value })?;
    }
    finish(w)
}

/// Rows may come in any order but every cell must appear exactly once.
pub fn field_from_csv(grid: Arc<Grid>, bytes: &[u8]) -> Result<GridFunction> {
    let n = grid.len();
    let mut values = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for row in csv::Reader::from_reader(bytes).deserialize() {
        let CellValue { cell_index, value } = row?;
        if cell_index >= n || seen[cell_index] {
            return Err(Error::Precondition(format!("cell index {cell_index} is out of range or repeated")));
        }
        seen[cell_index] = true;
        values[cell_index] = value;
    }
    let got = seen.iter().filter(|s| **s).count();
    if got != n {
        return Err(Error::LengthMismatch { expected: n, got });
    }
    GridFunction::new(grid, values)
}

pub fn field_to_bytes(u: &GridFunction) -> Vec<u8> {
    u.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn field_from_bytes(grid: Arc<Grid>, bytes: &[u8]) -> Result<GridFunction> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Precondition(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    GridFunction::new(grid, values)
}

/// Defect trace as CSV rows `(step, defect)`, step 0 being the input.
pub fn defect_trace_to_csv(trace: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (step, &defect) in trace.iter().enumerate() {
        w.serialize(DefectRow { step, defect })?;
    }
    finish(w)
}

pub fn defect_trace_from_csv(bytes: &[u8]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(bytes).deserialize() {
        let DefectRow { step, defect } = row?;
        if step != out.len() {
            return Err(Error::Precondition(format!("expected step {}, found {step}", out.len())));
        }
        out.push(defect);
    }
    Ok(out)
}

pub fn write_field_csv(path: &Path, u: &GridFunction) -> Result<()> {
    write_atomic(path, &field_to_csv(u)?)
}

pub fn write_field_binary(path: &Path, u: &GridFunction) -> Result<()> {
    write_atomic(path, &field_to_bytes(u))
}

pub fn read_field_csv(grid: Arc<Grid>, path: &Path) -> Result<GridFunction> {
    field_from_csv(grid, &std::fs::read(path)?)
}

pub fn read_field_binary(grid: Arc<Grid>, path: &Path) -> Result<GridFunction> {
    field_from_bytes(grid, &std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;

    fn field() -> GridFunction {
        let g = Arc::new(Grid::cartesian(DomainSpec::ball(2, 1.0).unwrap(), 8).unwrap());
        GridFunction::from_fn(g, |x| (3.0 * x[0]).sin() + x[1] / 7.0)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let u = field();
        let back = field_from_csv(u.grid().clone(), &field_to_csv(&u).unwrap()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let u = field();
        let bytes = field_to_bytes(&u);
        assert_eq!(bytes.len(), 8 * u.len());
        assert_eq!(field_from_bytes(u.grid().clone(), &bytes).unwrap(), u);
        assert!(field_from_bytes(u.grid().clone(), &bytes[..bytes.len() - 8]).is_err());
        assert!(field_from_bytes(u.grid().clone(), &bytes[..5]).is_err());
    }

    #[test]
    fn missing_cell_rejected() {
        let u = field();
        let text = String::from_utf8(field_to_csv(&u).unwrap()).unwrap();
        let cut: String = text.lines().take(u.len()).map(|l| format!("{l}\n")).collect();
        assert!(field_from_csv(u.grid().clone(), cut.as_bytes()).is_err());
    }

    #[test]
    fn defect_trace_round_trip() {
        let t = vec![0.5, 0.25, 0.125, 0.0];
        let bytes = defect_trace_to_csv(&t).unwrap();
        assert!(String::from_utf8(bytes.clone()).unwrap().starts_with("step,defect\n0,0.5\n"));
        assert_eq!(defect_trace_from_csv(&bytes).unwrap(), t);
    }
}

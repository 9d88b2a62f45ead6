//! CSV and JSON persistence.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::EnergyLedger;
use crate::energy::Field;
use crate::error::{Error, Result};
use crate::grid::{Grid, KernelWeights};
use crate::step::SignField;

/// Seventeen significant digits: enough for an exact `f64` round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
    path: &Path,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn coordinate_names(grid: &Grid) -> &'static [&'static str] {
    if grid.dimension() == 1 {
        &["x"]
    } else {
        &["x", "y"]
    }
}

/// `index, x[, y], value`
pub fn write_field_csv(path: &Path, grid: &Grid, u: &Field) -> Result<()> {
    if u.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: u.len(),
        });
    }
    let mut header = vec!["index"];
    header.extend(coordinate_names(grid));
    header.push("value");
    let rows = u.values().iter().enumerate().map(|(i, x)| {
        let mut row = vec![i.to_string()];
        row.extend(grid.coords(i).iter().map(|c| fmt_f64(*c)));
        row.push(fmt_f64(*x));
        row
    });
    write_atomic(path, &csv_bytes(&header, rows, path)?)
}

/// Reads the last column of a field CSV, checking that the first column
/// enumerates `0..n`.
pub fn read_field_csv(path: &Path, n: usize) -> Result<Field> {
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => malformed(format!("{other:?}")),
    })?;
    let mut values = Vec::with_capacity(n);
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let index: usize = record
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| malformed(format!("row {row}: bad index")))?;
        if index != row {
            return Err(malformed(format!("row {row} has index {index}")));
        }
        let value: f64 = record
            .get(record.len().saturating_sub(1))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| malformed(format!("row {row}: bad value")))?;
        values.push(value);
    }
    if values.len() != n {
        return Err(malformed(format!(
            "expected {n} rows, found {}",
            values.len()
        )));
    }
    Ok(Field(values))
}

/// Pair values as `i, j, z_ij` (both orders) and exterior values as `i, zeta_i`.
pub fn write_sign_field_csv(
    pairs_path: &Path,
    exterior_path: &Path,
    kernel: &KernelWeights,
    z: &SignField,
) -> Result<()> {
    z.check_shape(kernel)?;
    let rows = kernel
        .pairs()
        .iter()
        .zip(&z.pair_values)
        .flat_map(|(w, v)| {
            [
                vec![w.i.to_string(), w.j.to_string(), fmt_f64(*v)],
                vec![w.j.to_string(), w.i.to_string(), fmt_f64(-v)],
            ]
        });
    write_atomic(
        pairs_path,
        &csv_bytes(&["i", "j", "z_ij"], rows, pairs_path)?,
    )?;
    let rows = z
        .exterior_values
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)]);
    write_atomic(
        exterior_path,
        &csv_bytes(&["i", "zeta_i"], rows, exterior_path)?,
    )
}

pub const LEDGER_COLUMNS: [&str; 8] = [
    "k",
    "t",
    "seminorm",
    "l2_norm",
    "increment_l2",
    "source_energy",
    "margin_seminorm",
    "margin_l2",
];

pub fn write_ledger_csv(path: &Path, ledger: &EnergyLedger) -> Result<()> {
    let rows = ledger.rows.iter().map(|r| {
        vec![
            r.k.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.seminorm),
            fmt_f64(r.l2_norm),
            fmt_f64(r.increment_l2),
            fmt_f64(r.source_energy),
            fmt_f64(r.margin_seminorm),
            fmt_f64(r.margin_l2),
        ]
    });
    write_atomic(path, &csv_bytes(&LEDGER_COLUMNS, rows, path)?)
}

/// Plot data: a header and rows of numbers.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let rows = rows.iter().map(|r| r.iter().map(|x| fmt_f64(*x)).collect());
    write_atomic(path, &csv_bytes(header, rows, path)?)
}

//! Attribute tables on disk: CSV with a header row, or little-endian `f32`
//! with a `<file>.dims` sidecar holding `rows cols`.

use std::fs;
use std::path::{Path, PathBuf};

use shtc_core::linalg::AttributeTable;

use crate::error::{CliError, CliResult};

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn dims_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dims");
    PathBuf::from(s)
}

pub fn read_table(path: &Path) -> CliResult<AttributeTable> {
    if !path.exists() {
        return Err(CliError::Data(format!("{}: no such file", path.display())));
    }
    if is_csv(path) {
        read_csv(path)
    } else {
        read_raw(path)
    }
}

fn read_csv(path: &Path) -> CliResult<AttributeTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let cols = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {}, column {}: not a number: `{field}`",
                    path.display(),
                    i + 1,
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: row {}: non-finite value",
                    path.display(),
                    i + 1
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    AttributeTable::new(rows, cols, data).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_raw(path: &Path) -> CliResult<AttributeTable> {
    let dp = dims_path(path);
    let dims = fs::read_to_string(&dp).map_err(|e| CliError::Data(format!("{}: {e}", dp.display())))?;
    let parsed: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Data(format!("{}: expected `rows cols`", dp.display())))?;
    let [rows, cols] = parsed[..] else {
        return Err(CliError::Data(format!("{}: expected `rows cols`", dp.display())));
    };
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(CliError::Data(format!(
            "{}: {} bytes, sidecar says {rows}×{cols} f32 values",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    AttributeTable::new(rows, cols, data).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes CSV (`c0,c1,…` header) for `.csv` paths, raw `f32` plus sidecar
/// otherwise. CSV values keep full `f64` precision.
pub fn write_table(path: &Path, x: &AttributeTable) -> CliResult<()> {
    if is_csv(path) {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_record((0..x.cols()).map(|j| format!("c{j}")))
            .map_err(|e| CliError::Data(e.to_string()))?;
        for r in x.row_iter() {
            w.write_record(r.iter().map(|v| v.to_string()))
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        w.flush()?;
    } else {
        let mut bytes = Vec::with_capacity(x.data().len() * 4);
        for v in x.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, bytes)?;
        fs::write(dims_path(path), format!("{} {}\n", x.rows(), x.cols()))?;
    }
    Ok(())
}

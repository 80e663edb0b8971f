//! File formats: nodal CSV in and out, JSON-lines logs, atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use monovi::{Mesh, NodalField};
use serde::Serialize;

use crate::error::CliError;

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
    file.write_all(bytes).map_err(|e| io_error(&tmp, e))?;
    file.sync_all().map_err(|e| io_error(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

/// Columns `node_index, x[, y], u, v` in node order.
pub fn fields_csv(mesh: &Mesh, u: &[f64], v: &[f64]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: &[&str] = if mesh.dim() == 1 {
        &["node_index", "x", "u", "v"]
    } else {
        &["node_index", "x", "y", "u", "v"]
    };
    w.write_record(header).expect("in-memory write");
    for (i, c) in mesh.coords().iter().enumerate() {
        let mut row = vec![i.to_string(), c[0].to_string()];
        if mesh.dim() == 2 {
            row.push(c[1].to_string());
        }
        row.push(u[i].to_string());
        row.push(v[i].to_string());
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn json_lines<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("serializable record");
        out.push(b'\n');
    }
    out
}

/// Reads `u` and, when present, `v` from a nodal CSV written for the same
/// mesh. Node coordinates must match to 1e-9.
pub fn read_fields_csv(path: &Path, mesh: &Mesh) -> Result<(NodalField, Option<NodalField>), CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let idx = column("node_index").ok_or_else(|| bad("missing column node_index".into()))?;
    let u_col = column("u").ok_or_else(|| bad("missing column u".into()))?;
    let v_col = column("v");
    let x_col = column("x");
    let y_col = column("y");

    let n = mesh.num_nodes();
    let mut u = vec![f64::NAN; n];
    let mut v = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let num = |col: usize| -> Result<f64, CliError> {
            record
                .get(col)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: column {col} is not a number", line + 1)))
        };
        let i = record
            .get(idx)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&i| i < n)
            .ok_or_else(|| bad(format!("row {}: node_index out of range", line + 1)))?;
        if seen[i] {
            return Err(bad(format!("node {i} listed twice")));
        }
        seen[i] = true;
        let c = mesh.coords()[i];
        for (col, k) in [(x_col, 0), (y_col, 1)] {
            if let Some(col) = col {
                if (num(col)? - c[k]).abs() > 1e-9 {
                    return Err(bad(format!("node {i}: coordinates do not match the mesh")));
                }
            }
        }
        u[i] = num(u_col)?;
        if let Some(col) = v_col {
            v[i] = num(col)?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!("node {i} missing")));
    }
    let u = NodalField::from(u);
    if !u.is_finite() {
        return Err(bad("non-finite u".into()));
    }
    let v = v_col.map(|_| NodalField::from(v));
    if let Some(v) = &v {
        if !v.is_finite() {
            return Err(bad("non-finite v".into()));
        }
    }
    Ok((u, v))
}

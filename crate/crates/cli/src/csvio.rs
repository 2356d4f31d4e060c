//! Sample-column input and plot-ready CSV output.

use std::fmt::Write as _;
use std::path::Path;

use climvar::stats::NormalizedPdf;
use climvar::{Error, Result};
use ndarray::Array2;

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("{}: {}", path.display(), msg.into()))
}

/// Reads one numeric column. A first row that does not parse as numbers is
/// taken as a header, and `column` may then name a field; otherwise `column`
/// is a zero-based index.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
            other => bad(path, format!("{other:?}")),
        })?;
    let mut rows = reader.records();
    let first = match rows.next() {
        Some(r) => r.map_err(|e| bad(path, e.to_string()))?,
        None => return Err(bad(path, "empty file")),
    };
    let is_header = first.iter().any(|f| f.parse::<f64>().is_err());
    let index = match column.parse::<usize>() {
        Ok(i) => i,
        Err(_) if is_header => first
            .iter()
            .position(|f| f == column)
            .ok_or_else(|| bad(path, format!("no column named {column:?}")))?,
        Err(_) => return Err(bad(path, format!("no header row to look up column {column:?}"))),
    };
    let mut values = Vec::new();
    let mut push = |rec: &csv::StringRecord, line: usize| -> Result<()> {
        let field = rec.get(index).ok_or_else(|| bad(path, format!("line {line} has no column {index}")))?;
        let v: f64 = field
            .parse()
            .map_err(|_| bad(path, format!("line {line}: {field:?} is not a number")))?;
        if !v.is_finite() {
            return Err(bad(path, format!("line {line}: non-finite value")));
        }
        values.push(v);
        Ok(())
    };
    if !is_header {
        push(&first, 1)?;
    }
    for (i, rec) in rows.enumerate() {
        let rec = rec.map_err(|e| bad(path, e.to_string()))?;
        push(&rec, i + 2)?;
    }
    if values.is_empty() {
        return Err(bad(path, "no samples"));
    }
    Ok(values)
}

/// Both histograms on their shared grid: one row per bin, edges on the
/// normalised support and in sample units.
pub fn pdf_csv(p: &NormalizedPdf, q: &NormalizedPdf, config_hash: &str) -> String {
    let mut out = String::from("bin_lo,bin_hi,x_lo,x_hi,density_a,density_b,config_hash\n");
    let to_x = |u: f64| p.support_min + u * (p.support_max - p.support_min);
    for (i, w) in p.bin_edges.windows(2).enumerate() {
        let _ = writeln!(
            out,
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{config_hash}",
            w[0],
            w[1],
            to_x(w[0]),
            to_x(w[1]),
            p.density[i],
            q.density[i]
        );
    }
    out
}

/// Jacobian with one row per output and one column per input.
pub fn jacobian_csv(j: &Array2<f64>, inputs: &[String], outputs: &[String], config_hash: &str) -> String {
    let mut out = String::from("output");
    for name in inputs {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",config_hash\n");
    for (name, row) in outputs.iter().zip(j.rows()) {
        out.push_str(name);
        for v in row {
            let _ = write!(out, ",{v:.9e}");
        }
        let _ = writeln!(out, ",{config_hash}");
    }
    out
}

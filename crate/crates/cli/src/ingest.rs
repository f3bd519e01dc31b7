//! CSV ingestion for observed series.

use std::path::Path;

use crate::Failure;

/// Reads one numeric column from a headed CSV file.
///
/// Row numbers in errors are file line numbers, with the header on line 1.
pub fn ingest_series(path: &Path, column: &str) -> Result<Vec<f64>, Failure> {
    let cols = ingest_columns(path, &[column.to_string()])?;
    Ok(cols.into_iter().map(|mut r| r.remove(0)).collect())
}

/// Reads several numeric columns; each output row holds the requested columns in order.
pub fn ingest_columns(path: &Path, columns: &[String]) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot open {}: {e}", path.display())))?;
    // the reader silently skips empty lines, which are blank cells here
    let body = text.trim_end();
    if let Some(i) = body.lines().position(|l| l.trim().is_empty()) {
        return Err(Failure::Config(format!("{}: row {}: blank row", path.display(), i + 1)));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Failure::Config(format!("{}: no column `{c}`", path.display())))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let row = rec.position().map_or(0, |p| p.line());
        let mut vals = Vec::with_capacity(idx.len());
        for (&j, name) in idx.iter().zip(columns) {
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Failure::Config(format!("{}: row {row}, column `{name}`: non-numeric cell `{cell}`", path.display()))
            })?;
            if !v.is_finite() {
                return Err(Failure::Config(format!(
                    "{}: row {row}, column `{name}`: non-finite cell `{cell}`",
                    path.display()
                )));
            }
            vals.push(v);
        }
        out.push(vals);
    }
    Ok(out)
}

/// Multiplies every observation by `factor`.
pub fn scale_series(series: &mut [Vec<f64>], factor: f64) {
    for v in series.iter_mut().flatten() {
        *v *= factor;
    }
}

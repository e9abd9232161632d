use std::path::Path;

use nalgebra::DMatrix;

use crate::CliError;

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a numeric CSV file into an `n × p` matrix.
///
/// A first row in which no cell is numeric is taken to be a header and
/// skipped. Row numbers in errors count file lines from 1.
pub fn parse_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_csv_str(&text)
}

pub fn parse_csv_str(text: &str) -> Result<DMatrix<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut width = None;
    let mut values = Vec::new();
    let mut n = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse(e.to_string()))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if idx == 0 && record.iter().all(|c| parse_cell(c).is_none()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(CliError::Parse(format!(
                    "row {line} has {} fields, expected {w}",
                    record.len()
                )))
            }
            Some(_) => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let v = parse_cell(cell).ok_or_else(|| {
                CliError::Parse(format!(
                    "row {line}, column {}: {cell:?} is not a number",
                    col + 1
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    match width {
        Some(p) if n > 0 => Ok(DMatrix::from_row_slice(n, p, &values)),
        _ => Err(CliError::Input("no data rows".into())),
    }
}

//! CSV ingestion and emission.
//!
//! Numeric cells are written with Rust's shortest round-trip float
//! formatting, so a write/read cycle reproduces every value exactly.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use noisy_moe::Error;

/// A parsed numeric CSV: header names plus a dense value matrix.
pub struct NumericCsv {
    pub headers: Vec<String>,
    pub values: Array2<f64>,
}

pub fn read_numeric_csv(path: &Path) -> Result<NumericCsv, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: format!("{}: {e}", path.display()),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(Error::SchemaMismatch(format!(
            "{}: no columns",
            path.display()
        )));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_idx + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_idx + 1,
                column: String::new(),
                message: format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        for (col_idx, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: row_idx + 1,
                column: headers[col_idx].clone(),
                message: format!("'{field}' is not a number"),
            })?;
            rows.push(value);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::SchemaMismatch(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let values = Array2::from_shape_vec((n_rows, headers.len()), rows)
        .expect("row-major parse matches dimensions");
    Ok(NumericCsv { headers, values })
}

/// Splits a labeled table into covariates and the response column.
pub struct LabeledData {
    pub covariate_names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

pub fn split_response(table: &NumericCsv, response: Option<&str>) -> Result<LabeledData, Error> {
    let response_idx = match response {
        Some(name) => table
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                Error::SchemaMismatch(format!("response column '{name}' not found"))
            })?,
        None => table.headers.len() - 1,
    };
    if table.headers.len() < 2 {
        return Err(Error::SchemaMismatch(
            "labeled data needs at least one covariate and a response".into(),
        ));
    }
    let covariate_names: Vec<String> = table
        .headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let n = table.values.nrows();
    let p = table.headers.len() - 1;
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut jj = 0;
        for j in 0..table.headers.len() {
            if j == response_idx {
                y[i] = table.values[[i, j]];
            } else {
                x[[i, jj]] = table.values[[i, j]];
                jj += 1;
            }
        }
    }
    Ok(LabeledData {
        covariate_names,
        x,
        y,
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_matrix_csv(
    path: &Path,
    headers: &[String],
    values: &ArrayView2<f64>,
) -> Result<(), Error> {
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    for row in values.rows() {
        let fields: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_predictions_csv(path: &Path, yhat: &ArrayView1<f64>) -> Result<(), Error> {
    let mut out = String::from("yhat\n");
    for &v in yhat.iter() {
        out.push_str(&fmt(v));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

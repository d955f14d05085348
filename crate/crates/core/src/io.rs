//! File formats: delimited matrices with `NA` missing markers, CSV tables,
//! and the JSON run manifest written beside every artifact.
//!
//! Numbers are serialized in shortest round-trip decimal form, so a
//! write/read cycle reproduces every value bit for bit and the mask
//! exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::matrix::ObservedMatrix;
use crate::select::SelectionResult;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a comma-delimited matrix; `NA` (any case) or an empty field marks
/// a missing entry, and a single non-numeric header row is skipped.
pub fn read_matrix(path: &Path) -> Result<ObservedMatrix> {
    read_matrix_with_delimiter(path, ',')
}

pub fn read_matrix_with_delimiter(path: &Path, delimiter: char) -> Result<ObservedMatrix> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix(&text, delimiter)
}

fn is_missing_token(tok: &str) -> bool {
    tok.is_empty() || tok.eq_ignore_ascii_case("na")
}

fn parse_field(tok: &str) -> Option<Option<f64>> {
    // Some(None) = missing, Some(Some(x)) = value, None = unparseable
    if is_missing_token(tok) {
        return Some(None);
    }
    match tok.parse::<f64>() {
        Ok(x) if x.is_finite() => Some(Some(x)),
        _ => None,
    }
}

/// Parses matrix text. Exposed for tests; [`read_matrix`] is the file entry
/// point.
pub fn parse_matrix(text: &str, delimiter: char) -> Result<ObservedMatrix> {
    // keep 1-based line numbers for diagnostics; skip blank lines
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::EmptyMatrix);
    }

    // header auto-detection: a first row with any non-numeric, non-missing
    // token is a header
    let first_fields: Vec<&str> = lines[0].1.split(delimiter).map(str::trim).collect();
    let has_header = first_fields.iter().any(|tok| parse_field(tok).is_none());
    let data_lines = if has_header { &lines[1..] } else { &lines[..] };
    if data_lines.is_empty() {
        return Err(Error::EmptyMatrix);
    }

    let ncols = data_lines[0].1.split(delimiter).count();
    let nrows = data_lines.len();
    let mut values = Array2::<f64>::zeros((nrows, ncols));
    let mut mask = Array2::from_elem((nrows, ncols), false);
    for (r, &(line_no, line)) in data_lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if fields.len() != ncols {
            return Err(Error::RaggedRows {
                line: line_no,
                expected: ncols,
                found: fields.len(),
            });
        }
        for (c, tok) in fields.iter().enumerate() {
            match parse_field(tok) {
                Some(Some(x)) => {
                    values[(r, c)] = x;
                    mask[(r, c)] = true;
                }
                Some(None) => {}
                None => {
                    return Err(Error::ParseError {
                        line: line_no,
                        col: c + 1,
                        message: format!("cannot parse '{tok}' as a number"),
                    });
                }
            }
        }
    }
    ObservedMatrix::with_mask(values, mask)
}

/// Writes a matrix in the same delimited format; missing entries become `NA`.
pub fn write_matrix(m: &ObservedMatrix, path: &Path) -> Result<()> {
    write_matrix_with_delimiter(m, path, ',')
}

pub fn write_matrix_with_delimiter(
    m: &ObservedMatrix,
    path: &Path,
    delimiter: char,
) -> Result<()> {
    fs::write(path, matrix_to_string(m, delimiter)).map_err(|e| io_err(path, e))
}

/// Serializes a matrix in the delimited format.
pub fn matrix_to_string(m: &ObservedMatrix, delimiter: char) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(delimiter);
            }
            match m.get(i, j) {
                Some(x) => out.push_str(&format_number(x)),
                None => out.push_str("NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes a fully observed dense matrix.
pub fn write_dense(a: &Array2<f64>, path: &Path) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut out = String::new();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_number(a[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Shortest round-trip decimal form.
fn format_number(x: f64) -> String {
    format!("{x}")
}

/// Objective trajectory as a two-column CSV.
pub fn write_trajectory(fit: &FitResult, path: &Path) -> Result<()> {
    let mut out = String::from("t,objective\n");
    for (t, eps) in fit.objective_trajectory.iter().enumerate() {
        out.push_str(&format!("{t},{}\n", format_number(*eps)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Per-cell cross-validation table as CSV.
pub fn write_cv_table(sel: &SelectionResult, path: &Path) -> Result<()> {
    let folds = sel.cells.first().map_or(0, |c| c.fold_mse.len());
    let mut out = String::from("lambda1_row,lambda1_col,lambda2");
    for k in 1..=folds {
        out.push_str(&format!(",mse_fold{k}"));
    }
    out.push_str(",mean_mse,selected\n");
    for (i, cell) in sel.cells.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}",
            format_number(cell.lambdas.lambda1_row),
            format_number(cell.lambdas.lambda1_col),
            format_number(cell.lambdas.lambda2)
        ));
        for mse in &cell.fold_mse {
            out.push(',');
            out.push_str(&format_number(*mse));
        }
        out.push_str(&format!(
            ",{},{}\n",
            format_number(cell.mean_mse),
            u8::from(i == sel.best_index)
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// A vector as a single-column CSV with header.
pub fn write_column(header: &str, values: &[f64], path: &Path) -> Result<()> {
    let mut out = format!("{header}\n");
    for v in values {
        out.push_str(&format_number(*v));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Run manifest: everything needed to reproduce an artifact byte for byte.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<&'static str>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, parameters: serde_json::Value) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: "learner",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            parameters,
            seed: None,
            generator: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// Writes `manifest.json` into `dir` and returns its path.
pub fn write_manifest(manifest: &Manifest, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let mut file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
    file.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
    file.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

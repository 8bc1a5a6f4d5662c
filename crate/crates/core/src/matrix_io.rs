//! Plain-text matrix exchange format: a "rows cols" header line followed by
//! the entries in column-major order, separated by arbitrary whitespace.
//! Values are written with shortest round-trip precision, so write/read is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn parse_matrix(text: &str, source_name: &str) -> Result<DMatrix<f64>> {
    let parse_err = |detail: String| Error::Parse { source_name: source_name.to_string(), detail };
    let mut tokens = text.split_whitespace();
    let rows: usize = tokens
        .next()
        .ok_or_else(|| parse_err("empty input, expected a 'rows cols' header".into()))?
        .parse()
        .map_err(|e| parse_err(format!("bad row count: {e}")))?;
    let cols: usize = tokens
        .next()
        .ok_or_else(|| parse_err("missing column count in header".into()))?
        .parse()
        .map_err(|e| parse_err(format!("bad column count: {e}")))?;
    let expected = rows * cols;
    let mut values = Vec::with_capacity(expected);
    for tok in tokens {
        let v: f64 = tok
            .parse()
            .map_err(|e| parse_err(format!("bad value {tok:?}: {e}")))?;
        if !v.is_finite() {
            return Err(parse_err(format!("non-finite value {tok:?}")));
        }
        values.push(v);
        if values.len() > expected {
            return Err(parse_err(format!("more than {expected} values for a {rows}x{cols} matrix")));
        }
    }
    if values.len() != expected {
        return Err(parse_err(format!(
            "expected {expected} values for a {rows}x{cols} matrix, found {}",
            values.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, &values))
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        let mut line = String::new();
        for r in 0..m.nrows() {
            if r > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", m[(r, c)]);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

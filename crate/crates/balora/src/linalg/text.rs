//! Plain-text matrix format used by every artifact in the repo.
//!
//! First line: `rows cols` as decimal integers. Then `rows` lines of `cols`
//! space-separated floats printed with 17 significant digits, which is enough
//! for finite doubles to round-trip bit-exactly.

use super::DenseMatrix;
use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Formats one float with 17 significant digits.
pub(crate) fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a matrix into the text format.
pub fn write_matrix(m: &DenseMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = (0..m.cols()).map(|j| format_f64(m.at(i, j))).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Line-oriented reader that tracks 1-based line numbers for error reports.
pub struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines(),
            line_no: 0,
        }
    }

    pub fn line_no(&self) -> usize {
        self.line_no
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines.next().ok_or(Error::ParseError {
            line: self.line_no,
            message: "unexpected end of input".to_string(),
        })
    }

    /// Next line that is neither blank nor a `#` comment.
    pub fn next_content_line(&mut self) -> Result<&'a str> {
        loop {
            let line = self.next_line()?;
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Ok(line);
            }
        }
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::ParseError {
            line: self.line_no,
            message: message.into(),
        }
    }

    pub fn at_end(&mut self) -> bool {
        self.lines.clone().all(|l| l.trim().is_empty())
    }
}

/// Reads one matrix block from a [`LineReader`] positioned at its header.
pub fn read_matrix_from_lines(reader: &mut LineReader<'_>) -> Result<DenseMatrix> {
    let header = reader.next_content_line()?;
    let mut parts = header.split_whitespace();
    let rows: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| reader.error("expected `rows cols` header"))?;
    let cols: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| reader.error("expected `rows cols` header"))?;
    if parts.next().is_some() {
        return Err(reader.error("trailing tokens after `rows cols` header"));
    }
    if rows == 0 || cols == 0 {
        return Err(reader.error(format!("dimensions must be positive, got {rows}x{cols}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let line = reader.next_line()?;
        let before = data.len();
        for token in line.split_whitespace() {
            let value: f64 = token
                .parse()
                .map_err(|_| reader.error(format!("invalid float `{token}`")))?;
            data.push(value);
        }
        if data.len() - before != cols {
            return Err(reader.error(format!(
                "expected {cols} values per row, got {}",
                data.len() - before
            )));
        }
    }
    DenseMatrix::new(rows, cols, data)
        .map_err(|e| reader.error(format!("invalid matrix data: {e}")))
}

/// Parses a whole string as a single matrix.
pub fn read_matrix(text: &str) -> Result<DenseMatrix> {
    let mut reader = LineReader::new(text);
    let m = read_matrix_from_lines(&mut reader)?;
    if !reader.at_end() {
        return Err(reader.error("trailing content after matrix"));
    }
    Ok(m)
}

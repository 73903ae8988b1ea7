//! Plain-text parameter checkpoints.
//!
//! ```text
//! SFGL-GCN v1
//! hyper {"hidden":128,...}
//! W1 <rows> <cols>
//! <rows lines of cols values>
//! b1 1 <hidden>
//! ...
//! ```
//! Values are written with 9 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use super::{GcnHyper, GcnParams};
use crate::dataset::{read_text, write_text};
use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

const MAGIC: &str = "SFGL-GCN v1";

fn write_block(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "{name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:.8e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn format_checkpoint(p: &GcnParams) -> Result<String> {
    let mut out = format!("{MAGIC}\nhyper {}\n", serde_json::to_string(&p.hyper)?);
    write_block(&mut out, "W1", p.w1.rows(), p.w1.cols(), p.w1.data());
    write_block(&mut out, "b1", 1, p.b1.len(), &p.b1);
    write_block(&mut out, "W2", p.w2.rows(), p.w2.cols(), p.w2.data());
    write_block(&mut out, "b2", 1, p.b2.len(), &p.b2);
    Ok(out)
}

pub fn save_checkpoint(path: &Path, p: &GcnParams) -> Result<()> {
    write_text(path, &format_checkpoint(p)?)
}

pub fn load_checkpoint(path: &Path) -> Result<GcnParams> {
    parse_checkpoint(&read_text(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::parse(0, "unexpected end of checkpoint"))
    }
}

fn read_block(lines: &mut Lines<'_>, name: &str) -> Result<DenseMatrix> {
    let (ln, header) = lines.next()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != name {
        return Err(Error::parse(ln, format!("expected `{name} <rows> <cols>`, found `{header}`")));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(ln, format!("bad dimension `{s}`: {e}")));
    let (rows, cols) = (dim(parts[1])?, dim(parts[2])?);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (ln, line) = lines.next()?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| Error::parse(ln, format!("bad value `{tok}`: {e}")))?;
            if !v.is_finite() {
                return Err(Error::parse(ln, "non-finite weight"));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::parse(ln, format!("expected {cols} values, found {}", data.len() - before)));
        }
    }
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn parse_checkpoint(text: &str) -> Result<GcnParams> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (ln, magic) = lines.next()?;
    if magic != MAGIC {
        return Err(Error::parse(ln, format!("expected `{MAGIC}` header")));
    }
    let (ln, hyper_line) = lines.next()?;
    let hyper: GcnHyper = hyper_line
        .strip_prefix("hyper ")
        .ok_or_else(|| Error::parse(ln, "expected `hyper {...}`"))
        .and_then(|s| serde_json::from_str(s).map_err(|e| Error::parse(ln, e.to_string())))?;
    let w1 = read_block(&mut lines, "W1")?;
    let b1 = read_block(&mut lines, "b1")?;
    let w2 = read_block(&mut lines, "W2")?;
    let b2 = read_block(&mut lines, "b2")?;
    let p = GcnParams { w1, b1: b1.data().to_vec(), w2, b2: b2.data().to_vec(), hyper };
    p.validate()?;
    Ok(p)
}

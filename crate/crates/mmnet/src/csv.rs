//! Minimal CSV output: header row, comma separators, LF line endings.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::RunError;

/// Plain decimal with 9 significant digits (`0` for zero).
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let digits = |exp: i32| (8 - exp).max(0) as usize;
    let exp = v.abs().log10().floor() as i32;
    let s = format!("{v:.*}", digits(exp));
    let rounded: f64 = s.parse().expect("formatted float");
    let exp2 = rounded.abs().log10().floor() as i32;
    if exp2 != exp {
        format!("{v:.*}", digits(exp2))
    } else {
        s
    }
}

pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<std::fs::File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, RunError> {
        let file = std::fs::File::create(path).map_err(|e| RunError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(&header.join(","))?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<(), RunError> {
        writeln!(self.out, "{text}").map_err(|e| RunError::io(&self.path, e))
    }

    pub fn row(&mut self, cells: &[String]) -> Result<(), RunError> {
        self.line(&cells.join(","))
    }

    pub fn finish(mut self) -> Result<(), RunError> {
        self.out.flush().map_err(|e| RunError::io(&self.path, e))
    }
}

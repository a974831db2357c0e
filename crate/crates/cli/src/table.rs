//! CSV emission. Every table is preceded by `#` comment lines carrying the
//! job name, the SHA-256 of the resolved configuration and the
//! configuration itself.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => sig6(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Numeric cells that are NaN or infinite, as `(row, column)` names.
    pub fn non_finite(&self) -> Option<(usize, &str)> {
        self.rows.iter().enumerate().find_map(|(i, row)| {
            row.iter()
                .position(|c| matches!(c, Cell::Num(v) if !v.is_finite()))
                .map(|j| (i, self.columns[j].as_str()))
        })
    }
}

/// Six significant digits in fixed notation for magnitudes in
/// `[1e-5, 1e6)` and scientific notation outside.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    // the exponent after rounding to six digits, so 9.9999996 reads as 10.0000
    let sci = format!("{v:.5e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

pub fn emit(job: &str, hash: &str, echo: &str, table: &Table) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# levy-xva {job}");
    let _ = writeln!(out, "# config-sha256 {hash}");
    for line in echo.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            let _ = writeln!(out, "# {line}");
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&table.columns).expect("write to memory");
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render)).expect("write to memory");
    }
    let bytes = w.into_inner().expect("flush to memory");
    out.push_str(std::str::from_utf8(&bytes).expect("csv of utf-8 cells"));
    out
}

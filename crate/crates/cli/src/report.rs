//! Result tables rendered both as aligned text and as tab-separated values.
//! Both renderings share one formatted string per cell, so they always carry
//! identical numbers.

use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Num { value: f64, decimals: usize },
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn num(value: f64, decimals: usize) -> Self {
        Cell::Num { value, decimals }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num { value, decimals } => format!("{value:.decimals$}"),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Num { value, .. } => Some(*value),
            Cell::Text(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub title: String,
    /// Free-form header lines (settings, evaluation conventions, flags).
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl BenchReport {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> CliResult<()> {
        if row.len() != self.columns.len() {
            return Err(CliError::Invalid(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column, in row order.
    pub fn values(&self, name: &str) -> Vec<f64> {
        match self.column(name) {
            Some(i) => self.rows.iter().filter_map(|r| r[i].value()).collect(),
            None => Vec::new(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().flatten().filter_map(Cell::value).all(f64::is_finite)
    }

    fn rendered(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect()
    }

    fn header_lines(&self) -> String {
        let mut out = format!("# {}\n", self.title);
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let cells = self.rendered();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |items: Vec<String>, numeric: &dyn Fn(usize) -> bool| {
            items
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    if numeric(i) {
                        format!("{s:>w$}", w = widths[i])
                    } else {
                        format!("{s:<w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let is_numeric = |i: usize| self.rows.first().is_some_and(|r| r[i].value().is_some());
        let mut out = self.header_lines();
        out.push_str(&line(self.columns.clone(), &is_numeric));
        out.push('\n');
        for r in cells {
            out.push_str(&line(r, &is_numeric));
            out.push('\n');
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header_lines();
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for r in self.rendered() {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_tsv()).map_err(|e| CliError::io(path, e))
    }
}

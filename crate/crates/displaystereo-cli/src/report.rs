//! Experiment report tables rendered as CSV for machines and aligned
//! Markdown for people. Column order is fixed at construction, so a rerun
//! emits byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Value(f64),
    Int(u64),
    /// A grid cell whose computation failed; the sweep keeps going.
    Failed,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Value(v) => sig4(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Failed => "failed".into(),
        }
    }
}

/// Formats with 4 significant digits; plain decimal in a readable range,
/// scientific outside it.
pub fn sig4(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.000".into();
    }
    let a = v.abs();
    if (1e-4..1e5).contains(&a) {
        let places = (3 - a.log10().floor() as i64).max(0) as usize;
        format!("{v:.places$}")
    } else {
        format!("{v:.3e}")
    }
}

#[derive(Debug, Clone)]
pub struct ReportTable {
    pub title: String,
    /// Header of the label column.
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Cell>)>,
}

impl ReportTable {
    pub fn new(
        title: impl Into<String>,
        row_header: impl Into<String>,
        columns: Vec<String>,
    ) -> Self {
        ReportTable {
            title: title.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, cells: Vec<Cell>) {
        let label = label.into();
        assert_eq!(
            cells.len(),
            self.columns.len(),
            "row '{label}' has {} cells for {} columns",
            cells.len(),
            self.columns.len()
        );
        self.rows.push((label, cells));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_escape(&self.row_header));
        for c in &self.columns {
            out.push(',');
            out.push_str(&csv_escape(c));
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(&csv_escape(label));
            for cell in cells {
                out.push(',');
                out.push_str(&csv_escape(&cell.render()));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut widths: Vec<usize> = Vec::with_capacity(self.columns.len() + 1);
        widths.push(
            self.rows
                .iter()
                .map(|(l, _)| l.chars().count())
                .chain([self.row_header.chars().count()])
                .max()
                .unwrap_or(0),
        );
        for (j, col) in self.columns.iter().enumerate() {
            let w = self
                .rows
                .iter()
                .map(|(_, cells)| cells[j].render().chars().count())
                .chain([col.chars().count()])
                .max()
                .unwrap_or(0);
            widths.push(w);
        }

        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "## {}\n", self.title);
        }
        let _ = write!(out, "| {:<w$} |", self.row_header, w = widths[0]);
        for (j, col) in self.columns.iter().enumerate() {
            let _ = write!(out, " {:>w$} |", col, w = widths[j + 1]);
        }
        out.push('\n');
        let _ = write!(out, "| {:-<w$} |", "", w = widths[0]);
        for w in &widths[1..] {
            let _ = write!(out, " {:-<w$} |", "", w = *w);
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            let _ = write!(out, "| {:<w$} |", label, w = widths[0]);
            for (j, cell) in cells.iter().enumerate() {
                let _ = write!(out, " {:>w$} |", cell.render(), w = widths[j + 1]);
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.md` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.md")), self.to_markdown())?;
        Ok(())
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(0.003662), "0.003662");
        assert_eq!(sig4(0.4109), "0.4109");
        assert_eq!(sig4(12.3456), "12.35");
        assert_eq!(sig4(1.0), "1.000");
        assert_eq!(sig4(0.0), "0.000");
        assert_eq!(sig4(1.23456e-7), "1.235e-7");
        assert_eq!(sig4(-0.025), "-0.02500");
    }

    #[test]
    fn csv_layout_is_deterministic() {
        let mut t = ReportTable::new("demo", "family", vec!["a".into(), "b".into()]);
        t.push_row("x", vec![Cell::Value(0.5), Cell::Failed]);
        t.push_row("y", vec![Cell::Int(4), Cell::Value(0.003662)]);
        let csv = t.to_csv();
        assert_eq!(csv, "family,a,b\nx,0.5000,failed\ny,4,0.003662\n");
        assert_eq!(csv, t.to_csv());
    }

    #[test]
    fn markdown_columns_align() {
        let mut t = ReportTable::new("", "label", vec!["value".into()]);
        t.push_row("longer-label", vec![Cell::Value(0.25)]);
        t.push_row("s", vec![Cell::Value(1000.0)]);
        let md = t.to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(md.contains("0.2500"));
        assert!(md.contains("1000"));
    }

    #[test]
    #[should_panic(expected = "cells")]
    fn row_arity_is_enforced() {
        let mut t = ReportTable::new("", "x", vec!["a".into()]);
        t.push_row("bad", vec![]);
    }
}

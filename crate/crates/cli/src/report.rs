//! Rectangular report tables: a tab-separated file for people and a JSON
//! sidecar carrying the same rows at full precision.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Int,
    Float,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Decimal places for rounded presentation (floats only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub places: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn rank(&self) -> u8 {
        match self {
            Self::Missing => 0,
            Self::Int(_) | Self::Float(_) => 1,
            Self::Text(_) => 2,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Self::Int(v) => Some(*v as f64),
            Self::Float(v) => Some(*v),
            _ => None,
        }
    }

    /// Missing sorts first, then numbers, then text.
    pub fn compare(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Self::Text(a), Self::Text(b)) => a.cmp(b),
            (Self::Int(a), Self::Int(b)) => a.cmp(b),
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => a.total_cmp(&b),
                _ => self.rank().cmp(&other.rank()),
            },
        }
    }

    /// Shortest round-trip form; the TSV keeps full precision.
    pub fn raw(&self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            Self::Float(v) => format!("{v:?}"),
            Self::Text(s) => s.clone(),
            Self::Missing => "-".into(),
        }
    }

    pub fn rounded(&self, places: Option<usize>) -> String {
        match (self, places) {
            (Self::Float(v), Some(p)) => format!("{v:.p$}"),
            _ => self.raw(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Self::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Self::Float(v)
        } else {
            Self::Missing
        }
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Self::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Self::Missing, Into::into)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub name: String,
    pub title: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    #[serde(default)]
    pub footnotes: Vec<String>,
}

impl ReportTable {
    pub fn new(name: &str, title: &str) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            columns: Vec::new(),
            rows: Vec::new(),
            footnotes: Vec::new(),
        }
    }

    pub fn column(mut self, name: &str, kind: ColumnKind) -> Self {
        self.columns.push(Column {
            name: name.into(),
            kind,
            places: None,
        });
        self
    }

    pub fn float(mut self, name: &str, places: usize) -> Self {
        self.columns.push(Column {
            name: name.into(),
            kind: ColumnKind::Float,
            places: Some(places),
        });
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(CliError::Numerical(format!(
                "table {} row has {} cells, expected {}",
                self.name,
                row.len(),
                self.columns.len()
            )));
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            let ok = matches!(
                (cell, col.kind),
                (Cell::Missing, _)
                    | (Cell::Int(_), ColumnKind::Int)
                    | (Cell::Float(_), ColumnKind::Float)
                    | (Cell::Text(_), ColumnKind::Text)
            );
            if !ok {
                return Err(CliError::Numerical(format!(
                    "table {} column {} expects {:?}, got {cell:?}",
                    self.name, col.name, col.kind
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn footnote(&mut self, note: impl Into<String>) {
        self.footnotes.push(note.into());
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Stable sort by the named key columns, in order.
    pub fn sort_by(&mut self, keys: &[&str]) {
        let idx: Vec<usize> = keys.iter().filter_map(|k| self.index(k)).collect();
        self.rows.sort_by(|a, b| {
            idx.iter()
                .map(|&i| a[i].compare(&b[i]))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
    }

    pub fn get(&self, row: usize, column: &str) -> Option<&Cell> {
        self.index(column).and_then(|i| self.rows.get(row).map(|r| &r[i]))
    }

    pub fn column_values(&self, column: &str) -> Vec<&Cell> {
        match self.index(column) {
            Some(i) => self.rows.iter().map(|r| &r[i]).collect(),
            None => Vec::new(),
        }
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Numerical(format!("encoding table {}: {e}", self.name));
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::raw)).map_err(io)?;
        }
        let mut out =
            String::from_utf8(w.into_inner().map_err(|e| io(e.into_error().into()))?).expect("csv writes utf-8");
        for note in &self.footnotes {
            let _ = writeln!(out, "# {note}");
        }
        Ok(out)
    }

    /// Markdown with per-column rounding.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        let header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(
            out,
            "|{}|",
            self.columns
                .iter()
                .map(|c| if c.kind == ColumnKind::Text { "---" } else { "---:" })
                .collect::<Vec<_>>()
                .join("|")
        );
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&self.columns)
                .map(|(v, c)| v.rounded(c.places))
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        if !self.footnotes.is_empty() {
            out.push('\n');
            for note in &self.footnotes {
                let _ = writeln!(out, "- {note}");
            }
        }
        out
    }

    /// Writes `<dir>/<name>.tsv` and `<dir>/<name>.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let tsv = dir.join(format!("{}.tsv", self.name));
        let json = dir.join(format!("{}.json", self.name));
        std::fs::write(&tsv, self.to_tsv()?).map_err(|e| CliError::io(&tsv, e))?;
        let mut body = serde_json::to_string_pretty(self).map_err(|e| CliError::Numerical(e.to_string()))?;
        body.push('\n');
        std::fs::write(&json, body).map_err(|e| CliError::io(&json, e))?;
        Ok((tsv, json))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))
    }
}

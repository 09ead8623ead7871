//! Small CSV tables with deterministic formatting.

use std::path::Path;

use crate::data::write_atomic;
use crate::error::{Error, Result};

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Runtime(format!("csv encoding failed: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Runtime(format!("csv encoding failed: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    /// Read a table written by [`Table::write`].
    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
        let header = r
            .headers()
            .map_err(|e| parse_err(path, &e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| parse_err(path, &e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn parse_err(path: &Path, e: &csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    }
}

/// Typed access to a row of a [`Table`] by column name.
pub(crate) struct RowView<'a> {
    pub table: &'a Table,
    pub row: usize,
    pub path: &'a Path,
}

impl RowView<'_> {
    pub fn str(&self, col: &str) -> Result<&str> {
        let j = self.table.column(col).ok_or_else(|| Error::Parse {
            path: self.path.to_path_buf(),
            line: 1,
            message: format!("missing column `{col}`"),
        })?;
        Ok(&self.table.rows[self.row][j])
    }

    pub fn f64(&self, col: &str) -> Result<f64> {
        let s = self.str(col)?;
        s.parse().map_err(|_| self.bad(col, s))
    }

    pub fn u64(&self, col: &str) -> Result<u64> {
        let s = self.str(col)?;
        s.parse().map_err(|_| self.bad(col, s))
    }

    fn bad(&self, col: &str, s: &str) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.row as u64 + 2,
            message: format!("column `{col}`: cannot parse `{s}`"),
        }
    }
}

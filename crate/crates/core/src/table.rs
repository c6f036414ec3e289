//! Per-drawing metrics table and its CSV form.
//!
//! The first column is always `drawing_id`. Missing cells are empty. Numbers
//! are written with the shortest representation that parses back to the same
//! `f64`, so write -> read -> write is a fixed point.

use std::collections::HashSet;
use std::io::{Read, Write};

use thiserror::Error;

pub const ID_COLUMN: &str = "drawing_id";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("duplicate drawing_id {0:?}")]
    DuplicateId(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("column {0:?} is not numeric")]
    NotNumeric(String),
    #[error("column {name:?} has {got} cells, table has {expected} rows")]
    Length { name: String, expected: usize, got: usize },
    #[error("first column must be {ID_COLUMN:?}, found {0:?}")]
    BadHeader(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            ColumnData::Numeric(v) => v[row].map(format_number).unwrap_or_default(),
            ColumnData::Text(v) => v[row].clone().unwrap_or_default(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }
}

fn format_number(v: f64) -> String {
    // Display is the shortest round-trip form; keep -0 distinct
    if v == 0.0 && v.is_sign_negative() {
        "-0".to_string()
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    ids: Vec<String>,
    columns: Vec<(String, ColumnData)>,
}

impl MetricsTable {
    pub fn new(ids: Vec<String>) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(TableError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, columns: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|(n, _)| n == name)
    }

    pub fn add_column(&mut self, name: impl Into<String>, data: ColumnData) -> Result<(), TableError> {
        let name = name.into();
        if name == ID_COLUMN || self.has_column(&name) {
            return Err(TableError::DuplicateColumn(name));
        }
        if data.len() != self.len() {
            return Err(TableError::Length {
                name,
                expected: self.len(),
                got: data.len(),
            });
        }
        self.columns.push((name, data));
        Ok(())
    }

    pub fn add_numeric(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<(), TableError> {
        self.add_column(name, ColumnData::Numeric(values))
    }

    pub fn add_text(&mut self, name: impl Into<String>, values: Vec<Option<String>>) -> Result<(), TableError> {
        self.add_column(name, ColumnData::Text(values))
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData, TableError> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>], TableError> {
        match self.column(name)? {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Text(_) => Err(TableError::NotNumeric(name.to_string())),
        }
    }

    /// Cells as strings; numeric cells are formatted as they would be written.
    pub fn text(&self, name: &str) -> Result<Vec<Option<String>>, TableError> {
        Ok(match self.column(name)? {
            ColumnData::Text(v) => v.clone(),
            ColumnData::Numeric(v) => v.iter().map(|c| c.map(format_number)).collect(),
        })
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> MetricsTable {
        MetricsTable {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            columns: self.columns.iter().map(|(n, c)| (n.clone(), c.select(rows))).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TableError> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(std::iter::once(ID_COLUMN).chain(self.column_names()))?;
        for (row, id) in self.ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(self.columns.iter().map(|(_, c)| c.cell(row)));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads a table. A column is numeric when every non-empty cell parses as
    /// a number, unless it is listed in `text_columns`.
    pub fn read_csv<R: Read>(r: R, text_columns: &[&str]) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        match headers.first() {
            Some(h) if h == ID_COLUMN => {}
            other => return Err(TableError::BadHeader(other.cloned().unwrap_or_default())),
        }
        let mut ids = Vec::new();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len() - 1];
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for (c, cell) in rec.iter().skip(1).enumerate() {
                raw[c].push(cell.to_string());
            }
        }
        let mut table = MetricsTable::new(ids)?;
        for (name, cells) in headers.into_iter().skip(1).zip(raw) {
            let numeric = !text_columns.contains(&name.as_str())
                && cells.iter().all(|c| c.is_empty() || c.parse::<f64>().is_ok());
            let data = if numeric {
                ColumnData::Numeric(cells.iter().map(|c| (!c.is_empty()).then(|| c.parse().unwrap())).collect())
            } else {
                ColumnData::Text(cells.into_iter().map(|c| (!c.is_empty()).then_some(c)).collect())
            };
            table.add_column(name, data)?;
        }
        Ok(table)
    }
}

//! Result tables and their CSV / JSON encodings.
//!
//! Floats are written in the shortest form that parses back to the same bits. Columns
//! whose names end in `_ms` carry wall-clock timings and are the only values that vary
//! between runs with the same seed and config.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:?}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

pub fn is_timing_column(name: &str) -> bool {
    name.ends_with("_ms")
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width for table {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get(&self, row: usize, column: &str) -> Option<&Cell> {
        self.rows.get(row)?.get(self.column(column)?)
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "columns": self.columns,
            "rows": self
                .rows
                .iter()
                .map(|r| r.iter().map(Cell::to_json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }

    /// Copy with the timing columns removed.
    pub fn without_timings(&self) -> Table {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&i| !is_timing_column(&self.columns[i]))
            .collect();
        Table {
            name: self.name.clone(),
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn tables_json(tables: &[Table]) -> Value {
    let mut map = serde_json::Map::new();
    for t in tables {
        map.insert(t.name.clone(), t.to_json());
    }
    Value::Object(map)
}

/// Writes each table to `<dir>/<name>.<ext>`, creating the directory if needed.
pub fn write_tables_to_dir(tables: &[Table], dir: &Path, format: Format) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for t in tables {
        let path = dir.join(format!("{}.{}", t.name, format.extension()));
        let text = match format {
            Format::Csv => t.to_csv()?,
            Format::Json => serde_json::to_string_pretty(&t.to_json())? + "\n",
        };
        std::fs::write(path, text)?;
    }
    Ok(())
}

/// CSV tables each preceded by a `# name` line, or one JSON object keyed by table name.
pub fn write_tables<W: Write>(
    tables: &[Table],
    out: &mut W,
    format: Format,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    writeln!(out)?;
                }
                writeln!(out, "# {}", t.name)?;
                out.write_all(t.to_csv()?.as_bytes())?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &tables_json(tables))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

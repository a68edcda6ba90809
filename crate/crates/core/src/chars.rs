//! Per-table and per-column statistics extracted from tabular data.
//!
//! Statistics are exact: size, min/max (or string length range) and distinct
//! count per column. Key columns are included so workloads can remap their
//! real key domains onto the synthetic ones.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{DataType, Schema, TableDef, Value};

#[derive(Debug, Error)]
pub enum CharsError {
    #[error("table {0} is empty")]
    EmptyTable(String),
    #[error("type mismatch at row {row}, column {column}")]
    TypeMismatch { row: usize, column: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    Arity {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("unknown column {0} in header")]
    UnknownHeader(String),
    #[error("stats file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnRange {
    Numeric { min: Value, max: Value },
    Text { min_len: usize, max_len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCharacteristics {
    pub column: String,
    pub data_type: DataType,
    pub is_key: bool,
    pub range: ColumnRange,
    pub cardinality: u64,
}

impl ColumnCharacteristics {
    /// Numeric domain as floats, if the column is numeric.
    pub fn numeric_domain(&self) -> Option<(f64, f64)> {
        match &self.range {
            ColumnRange::Numeric { min, max } => Some((min.as_f64()?, max.as_f64()?)),
            ColumnRange::Text { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCharacteristics {
    pub table: String,
    pub size: u64,
    pub columns: Vec<ColumnCharacteristics>,
}

impl TableCharacteristics {
    pub fn column(&self, name: &str) -> Option<&ColumnCharacteristics> {
        self.columns.iter().find(|c| c.column == name)
    }
}

struct ColumnAcc {
    distinct: HashSet<Value>,
    min: Option<Value>,
    max: Option<Value>,
    min_len: usize,
    max_len: usize,
}

/// Computes characteristics of one table from rows whose fields are in the
/// table's column order.
pub fn extract_table<I, R>(table: &TableDef, rows: I) -> Result<TableCharacteristics, CharsError>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let mut accs: Vec<ColumnAcc> = table
        .columns
        .iter()
        .map(|_| ColumnAcc {
            distinct: HashSet::new(),
            min: None,
            max: None,
            min_len: usize::MAX,
            max_len: 0,
        })
        .collect();
    let mut size = 0u64;
    for (row_no, row) in rows.into_iter().enumerate() {
        let row = row.as_ref();
        if row.len() != table.columns.len() {
            return Err(CharsError::Arity {
                row: row_no + 1,
                found: row.len(),
                expected: table.columns.len(),
            });
        }
        for ((field, col), acc) in row.iter().zip(&table.columns).zip(accs.iter_mut()) {
            let v = col
                .data_type
                .parse_field(field)
                .ok_or_else(|| CharsError::TypeMismatch {
                    row: row_no + 1,
                    column: col.name.clone(),
                })?;
            if let Value::Str(s) = &v {
                let n = s.chars().count();
                acc.min_len = acc.min_len.min(n);
                acc.max_len = acc.max_len.max(n);
            } else {
                if acc.min.as_ref().is_none_or(|m| &v < m) {
                    acc.min = Some(v.clone());
                }
                if acc.max.as_ref().is_none_or(|m| &v > m) {
                    acc.max = Some(v.clone());
                }
            }
            acc.distinct.insert(v);
        }
        size += 1;
    }
    if size == 0 {
        return Err(CharsError::EmptyTable(table.name.clone()));
    }
    let columns = table
        .columns
        .iter()
        .zip(accs)
        .map(|(col, acc)| ColumnCharacteristics {
            column: col.name.clone(),
            data_type: col.data_type,
            is_key: table.is_key_column(&col.name),
            range: match (acc.min, acc.max) {
                (Some(min), Some(max)) => ColumnRange::Numeric { min, max },
                _ => ColumnRange::Text {
                    min_len: acc.min_len,
                    max_len: acc.max_len,
                },
            },
            cardinality: acc.distinct.len() as u64,
        })
        .collect();
    Ok(TableCharacteristics {
        table: table.name.clone(),
        size,
        columns,
    })
}

/// Reads a delimited file with a header row naming the table's columns (in
/// any order) and extracts its characteristics.
pub fn extract_csv<R: Read>(
    table: &TableDef,
    input: R,
) -> Result<TableCharacteristics, CharsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let mut order = Vec::with_capacity(header.len());
    for h in header.iter() {
        let idx = table
            .column_index(h.trim())
            .ok_or_else(|| CharsError::UnknownHeader(h.to_string()))?;
        order.push(idx);
    }
    if order.len() != table.columns.len() {
        return Err(CharsError::Arity {
            row: 0,
            found: order.len(),
            expected: table.columns.len(),
        });
    }
    let mut err = None;
    let rows = reader.records().map_while(|rec| match rec {
        Ok(rec) => {
            let mut row = vec![String::new(); order.len()];
            for (field, &idx) in rec.iter().zip(&order) {
                row[idx] = field.to_string();
            }
            Some(row)
        }
        Err(e) => {
            err = Some(e);
            None
        }
    });
    let out = extract_table(table, rows);
    match err {
        Some(e) => Err(e.into()),
        None => out,
    }
}

/// Extracts every table from `<dir>/<table>.csv`, one worker per table.
pub fn extract_characteristics(
    schema: &Schema,
    dir: &Path,
) -> Result<Vec<TableCharacteristics>, CharsError> {
    schema
        .tables
        .par_iter()
        .map(|t| {
            let file = File::open(dir.join(format!("{}.csv", t.name)))?;
            extract_csv(t, std::io::BufReader::new(file))
        })
        .collect()
}

pub const STATS_HEADER: &str = "# tracesynth-chars v1";

/// Stats file writer: `[table T]` and `[column T.c]` blocks of `key = value`.
pub fn write_stats(stats: &[TableCharacteristics]) -> String {
    let mut out = String::new();
    writeln!(out, "{STATS_HEADER}").unwrap();
    for t in stats {
        writeln!(out, "\n[table {}]\nsize = {}", t.table, t.size).unwrap();
        for c in &t.columns {
            writeln!(out, "\n[column {}.{}]", t.table, c.column).unwrap();
            writeln!(out, "type = {}\nkey = {}", c.data_type, c.is_key).unwrap();
            match &c.range {
                ColumnRange::Numeric { min, max } => {
                    writeln!(out, "min = {min}\nmax = {max}").unwrap()
                }
                ColumnRange::Text { min_len, max_len } => {
                    writeln!(out, "min_len = {min_len}\nmax_len = {max_len}").unwrap()
                }
            }
            writeln!(out, "cardinality = {}", c.cardinality).unwrap();
        }
    }
    out
}

/// Column block being read: start line, `table.column` and its fields.
type PendingColumn = (usize, String, Vec<(String, String)>);

pub fn parse_stats(text: &str) -> Result<Vec<TableCharacteristics>, CharsError> {
    let perr = |line: usize, msg: &str| CharsError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut tables: Vec<TableCharacteristics> = Vec::new();
    let mut pending: Option<PendingColumn> = None;

    fn finish_column(
        tables: &mut [TableCharacteristics],
        line: usize,
        name: &str,
        kv: &[(String, String)],
    ) -> Result<(), CharsError> {
        let perr = |msg: &str| CharsError::Parse {
            line,
            msg: msg.to_string(),
        };
        let (tname, cname) = name
            .split_once('.')
            .ok_or_else(|| perr("column name must be table.column"))?;
        let get = |k: &str| kv.iter().find(|(kk, _)| kk == k).map(|(_, v)| v.as_str());
        let data_type: DataType = get("type")
            .ok_or_else(|| perr("missing type"))?
            .parse()
            .map_err(|e: String| perr(&e))?;
        let is_key = get("key").map(|v| v == "true").unwrap_or(false);
        let cardinality = get("cardinality")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| perr("bad cardinality"))?;
        let range = if data_type.is_numeric() {
            let min = get("min")
                .and_then(Value::parse_token)
                .ok_or_else(|| perr("bad min"))?;
            let max = get("max")
                .and_then(Value::parse_token)
                .ok_or_else(|| perr("bad max"))?;
            ColumnRange::Numeric { min, max }
        } else {
            let min_len = get("min_len")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr("bad min_len"))?;
            let max_len = get("max_len")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr("bad max_len"))?;
            ColumnRange::Text { min_len, max_len }
        };
        let table = tables
            .iter_mut()
            .find(|t| t.table == tname)
            .ok_or_else(|| perr("column before its table"))?;
        table.columns.push(ColumnCharacteristics {
            column: cname.to_string(),
            data_type,
            is_key,
            range,
            cardinality,
        });
        Ok(())
    }

    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(section) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if let Some((l, name, kv)) = pending.take() {
                finish_column(&mut tables, l, &name, &kv)?;
            }
            let (kind, name) = section
                .split_once(' ')
                .ok_or_else(|| perr(line_no, "bad section"))?;
            match kind {
                "table" => tables.push(TableCharacteristics {
                    table: name.trim().to_string(),
                    size: 0,
                    columns: vec![],
                }),
                "column" => pending = Some((line_no, name.trim().to_string(), Vec::new())),
                _ => return Err(perr(line_no, "unknown section kind")),
            }
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(line_no, "expected key = value"))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        match &mut pending {
            Some((_, _, kv)) => kv.push((k, v)),
            None => {
                let t = tables
                    .last_mut()
                    .ok_or_else(|| perr(line_no, "value outside a section"))?;
                if k == "size" {
                    t.size = v.parse().map_err(|_| perr(line_no, "bad size"))?;
                }
            }
        }
    }
    if let Some((l, name, kv)) = pending.take() {
        finish_column(&mut tables, l, &name, &kv)?;
    }
    Ok(tables)
}

impl fmt::Display for TableCharacteristics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&write_stats(std::slice::from_ref(self)))
    }
}

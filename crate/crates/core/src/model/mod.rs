//! Shared vocabulary: schemas, transaction templates and workload traces.

mod lex;
mod schema;
mod template;
mod trace;
mod value;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use schema::{parse_schema, ColumnDef, ForeignKey, Schema, TableDef};
pub use template::{
    parse_templates, serialize_templates, FilterKind, OpKind, OpLocation, ParamSlot, ReturnSlot,
    SqlOp, TemplateNode, TransactionTemplate,
};
pub use trace::{
    read_trace, LightOp, LightTraceRecord, OpRecord, TraceMode, TraceReader, TraceRecord,
    TransactionInstance,
};
pub use value::Value;

pub(crate) use trace::{brackets, split_fields, split_top};
pub(crate) use value::quote;

#[cfg(test)]
pub(crate) use template::tests as fixtures;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("cyclic foreign key references among tables {0:?}")]
    CyclicForeignKey(Vec<String>),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("duplicate name {0}")]
    Duplicate(String),
    #[error("placeholder count does not match declared parameters in operation {0}")]
    PlaceholderMismatch(usize),
    #[error("operation {op}: {msg}")]
    InvalidOp { op: usize, msg: String },
}

impl ModelError {
    pub(crate) fn syntax(line: usize, msg: impl Into<String>) -> Self {
        ModelError::Syntax {
            line,
            msg: msg.into(),
        }
    }
}

/// Column data types understood by the generator and analyzers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataType {
    Integer,
    Decimal,
    Varchar,
    Datetime,
    Boolean,
}

impl DataType {
    /// Numeric types are generated with the affine transformer; datetimes
    /// are epoch milliseconds and booleans are 0/1.
    pub fn is_numeric(self) -> bool {
        !matches!(self, DataType::Varchar)
    }

    pub fn is_integral(self) -> bool {
        matches!(
            self,
            DataType::Integer | DataType::Datetime | DataType::Boolean
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DataType::Integer => "integer",
            DataType::Decimal => "decimal",
            DataType::Varchar => "varchar",
            DataType::Datetime => "datetime",
            DataType::Boolean => "boolean",
        }
    }

    /// Parses one field of a delimited data file.
    pub fn parse_field(self, field: &str) -> Option<Value> {
        let field = field.trim();
        match self {
            DataType::Integer | DataType::Datetime => field.parse().ok().map(Value::Int),
            DataType::Decimal => field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Value::Dec),
            DataType::Varchar => Some(Value::Str(field.to_string())),
            DataType::Boolean => match field.to_ascii_lowercase().as_str() {
                "true" | "1" => Some(Value::Int(1)),
                "false" | "0" => Some(Value::Int(0)),
                _ => None,
            },
        }
    }
}

impl FromStr for DataType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "integer" | "int" | "bigint" => Ok(DataType::Integer),
            "decimal" | "double" | "float" | "numeric" => Ok(DataType::Decimal),
            "varchar" | "string" | "text" => Ok(DataType::Varchar),
            "datetime" | "timestamp" => Ok(DataType::Datetime),
            "boolean" | "bool" => Ok(DataType::Boolean),
            other => Err(format!("unknown data type {other}")),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `table.column`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// `p(i,j)`: the j-th parameter of the i-th operation, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamRef {
    pub op: usize,
    pub pos: usize,
}

impl ParamRef {
    pub fn new(op: usize, pos: usize) -> Self {
        ParamRef { op, pos }
    }
}

impl fmt::Display for ParamRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p({},{})", self.op, self.pos)
    }
}

/// `r(u,v)`: the v-th return item of the u-th operation, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReturnRef {
    pub op: usize,
    pub pos: usize,
}

impl ReturnRef {
    pub fn new(op: usize, pos: usize) -> Self {
        ReturnRef { op, pos }
    }
}

impl fmt::Display for ReturnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r({},{})", self.op, self.pos)
    }
}

/// Parses `p(i,j)` or `r(i,j)`; returns the letter and both indices.
pub fn parse_item_ref(s: &str) -> Option<(char, usize, usize)> {
    let s = s.trim();
    let kind = s.chars().next()?;
    let inner = s.get(1..)?.strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some((kind, a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl FromStr for ParamRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_item_ref(s) {
            Some(('p', op, pos)) if op > 0 && pos > 0 => Ok(ParamRef { op, pos }),
            _ => Err(format!("bad parameter reference {s}")),
        }
    }
}

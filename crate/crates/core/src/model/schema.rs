use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use super::lex::{tokenize, Cursor, Tok};
use super::{DataType, ModelError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub data_type: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignKey {
    pub columns: Vec<String>,
    pub ref_table: String,
    pub ref_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn is_pk_column(&self, name: &str) -> bool {
        self.primary_key.iter().any(|c| c == name)
    }

    /// The foreign-key target of a local column, if any.
    pub fn fk_target(&self, column: &str) -> Option<(&str, &str)> {
        self.foreign_keys.iter().find_map(|fk| {
            fk.columns
                .iter()
                .position(|c| c == column)
                .map(|i| (fk.ref_table.as_str(), fk.ref_columns[i].as_str()))
        })
    }

    /// Primary-key and foreign-key columns.
    pub fn is_key_column(&self, name: &str) -> bool {
        self.is_pk_column(name) || self.fk_target(name).is_some()
    }
}

/// A validated database schema. Foreign keys form a DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub tables: Vec<TableDef>,
}

impl Schema {
    pub fn new(tables: Vec<TableDef>) -> Result<Self, ModelError> {
        let schema = Schema { tables };
        schema.validate()?;
        Ok(schema)
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn foreign_key_count(&self) -> usize {
        self.tables.iter().map(|t| t.foreign_keys.len()).sum()
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(ModelError::Duplicate(t.name.clone()));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(ModelError::Duplicate(format!("{}.{}", t.name, c.name)));
                }
            }
            for pk in &t.primary_key {
                if t.column(pk).is_none() {
                    return Err(ModelError::UnknownColumn(format!("{}.{pk}", t.name)));
                }
            }
        }
        for t in &self.tables {
            for fk in &t.foreign_keys {
                for c in &fk.columns {
                    if t.column(c).is_none() {
                        return Err(ModelError::UnknownColumn(format!("{}.{c}", t.name)));
                    }
                }
                let target = self
                    .table(&fk.ref_table)
                    .ok_or_else(|| ModelError::UnknownTable(fk.ref_table.clone()))?;
                if fk.columns.len() != fk.ref_columns.len() {
                    return Err(ModelError::UnknownColumn(format!(
                        "{}({})",
                        fk.ref_table,
                        fk.ref_columns.join(",")
                    )));
                }
                for c in &fk.ref_columns {
                    if target.column(c).is_none() {
                        return Err(ModelError::UnknownColumn(format!("{}.{c}", fk.ref_table)));
                    }
                }
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Tables ordered so that every referenced table precedes its referrers.
    pub fn topological_order(&self) -> Result<Vec<&TableDef>, ModelError> {
        let mut deps: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for t in &self.tables {
            let entry = deps.entry(t.name.as_str()).or_default();
            for fk in &t.foreign_keys {
                entry.insert(fk.ref_table.as_str());
            }
        }
        let mut order = Vec::with_capacity(self.tables.len());
        let mut done: HashSet<&str> = HashSet::new();
        while done.len() < self.tables.len() {
            let before = done.len();
            for t in &self.tables {
                if done.contains(t.name.as_str()) {
                    continue;
                }
                if deps[t.name.as_str()].iter().all(|d| done.contains(d)) {
                    done.insert(t.name.as_str());
                    order.push(t);
                }
            }
            if done.len() == before {
                let stuck = self
                    .tables
                    .iter()
                    .filter(|t| !done.contains(t.name.as_str()))
                    .map(|t| t.name.clone())
                    .collect();
                return Err(ModelError::CyclicForeignKey(stuck));
            }
        }
        Ok(order)
    }
}

/// Parses a schema file: one `TABLE name (col type, ...) PK(...) FK(... -> t(...))`
/// block per table.
pub fn parse_schema(text: &str) -> Result<Schema, ModelError> {
    let mut cur = Cursor::new(tokenize(text)?);
    let mut tables = Vec::new();
    while !cur.at_end() {
        tables.push(parse_table(&mut cur)?);
        cur.eat_punct(';');
    }
    Schema::new(tables)
}

fn parse_table(cur: &mut Cursor) -> Result<TableDef, ModelError> {
    cur.expect_keyword("TABLE")?;
    let name = cur.expect_ident()?;
    cur.expect_punct('(')?;
    let mut columns = Vec::new();
    loop {
        let col = cur.expect_ident()?;
        let line = cur.line();
        let ty = cur.expect_ident()?;
        let data_type = ty
            .parse::<DataType>()
            .map_err(|e| ModelError::syntax(line, e))?;
        // optional length, e.g. varchar(16)
        if cur.is_punct('(') {
            cur.next();
            cur.expect_ident()?;
            cur.expect_punct(')')?;
        }
        columns.push(ColumnDef {
            name: col,
            data_type,
        });
        if cur.eat_punct(')') {
            break;
        }
        cur.expect_punct(',')?;
    }
    let mut primary_key = Vec::new();
    let mut foreign_keys = Vec::new();
    loop {
        if cur.eat_keyword("PK") {
            if !primary_key.is_empty() {
                return Err(cur.err("duplicate PK clause"));
            }
            primary_key = ident_list(cur)?;
        } else if cur.is_keyword("FK") && cur.peek_at(1) == Some(&Tok::Punct('(')) {
            cur.next();
            cur.expect_punct('(')?;
            let mut cols = vec![cur.expect_ident()?];
            while cur.eat_punct(',') {
                cols.push(cur.expect_ident()?);
            }
            cur.expect_arrow()?;
            let ref_table = cur.expect_ident()?;
            let ref_columns = ident_list(cur)?;
            cur.expect_punct(')')?;
            foreign_keys.push(ForeignKey {
                columns: cols,
                ref_table,
                ref_columns,
            });
        } else {
            break;
        }
    }
    if primary_key.is_empty() {
        return Err(cur.err(format!("table {name} has no PK clause")));
    }
    Ok(TableDef {
        name,
        columns,
        primary_key,
        foreign_keys,
    })
}

fn ident_list(cur: &mut Cursor) -> Result<Vec<String>, ModelError> {
    cur.expect_punct('(')?;
    let mut out = vec![cur.expect_ident()?];
    while cur.eat_punct(',') {
        out.push(cur.expect_ident()?);
    }
    cur.expect_punct(')')?;
    Ok(out)
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tables {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| format!("{} {}", c.name, c.data_type))
                .collect();
            write!(
                f,
                "TABLE {} ({}) PK({})",
                t.name,
                cols.join(", "),
                t.primary_key.join(",")
            )?;
            for fk in &t.foreign_keys {
                write!(
                    f,
                    " FK({} -> {}({}))",
                    fk.columns.join(","),
                    fk.ref_table,
                    fk.ref_columns.join(",")
                )?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

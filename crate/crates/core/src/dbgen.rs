//! Synthetic database generation.
//!
//! Primary keys are enumerated sequentially, foreign keys are drawn uniformly
//! from the referenced key domain and other columns come from a deterministic
//! index-to-value transformer sized by the column's cardinality. Every row is
//! a pure function of `(seed, table, row rank)`, so any partition of the key
//! range across workers yields the same rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::{Alphanumeric, Distribution};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::chars::{ColumnCharacteristics, ColumnRange, TableCharacteristics};
use crate::model::{DataType, Schema, TableDef, Value};
use crate::seed;

#[derive(Debug, Error)]
pub enum DbGenError {
    #[error("table {table}: composite primary key has {count} columns outside foreign keys; only one is supported")]
    UnresolvableComposite { table: String, count: usize },
    #[error("no size given for table {0}")]
    MissingSize(String),
    #[error("no characteristics for column {0}")]
    MissingColumn(String),
    #[error("key range {lo}..={hi} is outside table {table} (1..={rows})")]
    BadRange {
        table: String,
        lo: u64,
        hi: u64,
        rows: u64,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainSource {
    SinglePk,
    InheritedFk,
    ResidualComposite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyDomain {
    pub lo: i64,
    pub hi: i64,
    pub source: DomainSource,
}

impl KeyDomain {
    pub fn len(&self) -> u64 {
        (self.hi - self.lo + 1).max(0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

/// Key column domains of one table, keyed by column name.
pub type TableDomains = BTreeMap<String, KeyDomain>;

/// Assigns an integer domain to every primary- and foreign-key column,
/// resolving tables after the tables they reference.
pub fn derive_key_domains(
    schema: &Schema,
    sizes: &BTreeMap<String, u64>,
) -> Result<BTreeMap<String, TableDomains>, DbGenError> {
    let mut out: BTreeMap<String, TableDomains> = BTreeMap::new();
    for t in schema.topological_order()? {
        let s = *sizes
            .get(&t.name)
            .ok_or_else(|| DbGenError::MissingSize(t.name.clone()))?;
        let mut doms = TableDomains::new();
        for fk in &t.foreign_keys {
            for (c, rc) in fk.columns.iter().zip(&fk.ref_columns) {
                let d = out[&fk.ref_table].get(rc).copied().unwrap_or(KeyDomain {
                    lo: 1,
                    hi: sizes[&fk.ref_table] as i64,
                    source: DomainSource::SinglePk,
                });
                doms.insert(
                    c.clone(),
                    KeyDomain {
                        source: DomainSource::InheritedFk,
                        ..d
                    },
                );
            }
        }
        let residual: Vec<&String> = t
            .primary_key
            .iter()
            .filter(|c| !doms.contains_key(*c))
            .collect();
        if t.primary_key.len() == 1 {
            if let Some(c) = residual.first() {
                doms.insert(
                    (*c).clone(),
                    KeyDomain {
                        lo: 1,
                        hi: s as i64,
                        source: DomainSource::SinglePk,
                    },
                );
            }
        } else {
            match residual.len() {
                0 => {}
                1 => {
                    let fk_product: u64 = t
                        .primary_key
                        .iter()
                        .filter_map(|c| doms.get(c))
                        .map(|d| d.len().max(1))
                        .product();
                    let hi = (s / fk_product.max(1)).max(1);
                    doms.insert(
                        residual[0].clone(),
                        KeyDomain {
                            lo: 1,
                            hi: hi as i64,
                            source: DomainSource::ResidualComposite,
                        },
                    );
                }
                n => {
                    return Err(DbGenError::UnresolvableComposite {
                        table: t.name.clone(),
                        count: n,
                    })
                }
            }
        }
        out.insert(t.name.clone(), doms);
    }
    Ok(out)
}

pub const SEED_STRING_COUNT: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum Transformer {
    NumericLinear { lo: f64, hi: f64, integral: bool },
    StringSeeded { seeds: Vec<String> },
}

/// Maps a uniform index in `[1, n]` to a column value.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnGenerator {
    pub cardinality: u64,
    pub data_type: DataType,
    pub transformer: Transformer,
}

impl ColumnGenerator {
    pub fn numeric(lo: f64, hi: f64, cardinality: u64, data_type: DataType) -> Self {
        let integral = data_type.is_integral();
        let mut n = cardinality.max(1);
        if integral && hi >= lo {
            // an integral domain cannot hold more distinct values than it has points
            n = n.min((hi - lo) as u64 + 1);
        }
        ColumnGenerator {
            cardinality: n,
            data_type,
            transformer: Transformer::NumericLinear { lo, hi, integral },
        }
    }

    pub fn string(seeds: Vec<String>, cardinality: u64) -> Self {
        ColumnGenerator {
            cardinality: cardinality.max(1),
            data_type: DataType::Varchar,
            transformer: Transformer::StringSeeded { seeds },
        }
    }

    pub fn value(&self, index: u64) -> Value {
        let i = index.clamp(1, self.cardinality);
        match &self.transformer {
            Transformer::NumericLinear { lo, hi, integral } => {
                let x = if self.cardinality == 1 {
                    *lo
                } else {
                    lo + (i - 1) as f64 * (hi - lo) / (self.cardinality - 1) as f64
                };
                if *integral {
                    Value::Int((x + 0.5).floor() as i64)
                } else {
                    Value::Dec(x)
                }
            }
            Transformer::StringSeeded { seeds } => {
                Value::Str(format!("{i}{}", seeds[(i % seeds.len() as u64) as usize]))
            }
        }
    }

    /// Index whose value is nearest to `v`. Strings produced by this generator
    /// map back exactly; other strings hash into the index range.
    pub fn index_of(&self, v: &Value) -> u64 {
        let n = self.cardinality;
        match (&self.transformer, v) {
            (Transformer::NumericLinear { lo, hi, .. }, _) => {
                let Some(x) = v.as_f64() else {
                    return 1 + seed::fnv1a(v.to_string().as_bytes()) % n;
                };
                if n == 1 || hi <= lo {
                    return 1;
                }
                let pos = (x - lo) * (n - 1) as f64 / (hi - lo);
                ((pos + 0.5).floor().max(0.0) as u64 + 1).min(n)
            }
            (Transformer::StringSeeded { .. }, Value::Str(s)) => {
                let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
                match digits.parse::<u64>() {
                    Ok(i) if (1..=n).contains(&i) && self.value(i) == *v => i,
                    _ => 1 + seed::fnv1a(s.as_bytes()) % n,
                }
            }
            (Transformer::StringSeeded { .. }, _) => 1 + seed::fnv1a(v.to_string().as_bytes()) % n,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        self.value(rng.random_range(1..=self.cardinality))
    }
}

/// Seed strings for a varchar column: each starts with a letter so the
/// numeric index prefix stays unambiguous, and the combined value fits the
/// observed length range where possible.
pub fn seed_strings(
    seed: u64,
    column: &str,
    min_len: usize,
    max_len: usize,
    cardinality: u64,
) -> Vec<String> {
    let mut rng = seed::rng(seed::derive_str(seed, column));
    let digits = cardinality.max(1).to_string().len();
    let hi = max_len.saturating_sub(digits).max(1);
    let lo = min_len.saturating_sub(1).clamp(1, hi);
    (0..SEED_STRING_COUNT)
        .map(|_| {
            let len = rng.random_range(lo..=hi);
            let mut s = String::with_capacity(len);
            s.push(rng.random_range(b'a'..=b'z') as char);
            s.extend(
                Alphanumeric
                    .sample_iter(&mut rng)
                    .take(len - 1)
                    .map(char::from),
            );
            s
        })
        .collect()
}

pub fn make_column_generator(cc: &ColumnCharacteristics, seed: u64) -> ColumnGenerator {
    match &cc.range {
        ColumnRange::Numeric { min, max } => ColumnGenerator::numeric(
            min.as_f64().unwrap_or(0.0),
            max.as_f64().unwrap_or(0.0),
            cc.cardinality,
            cc.data_type,
        ),
        ColumnRange::Text { min_len, max_len } => ColumnGenerator::string(
            seed_strings(seed, &cc.column, *min_len, *max_len, cc.cardinality),
            cc.cardinality,
        ),
    }
}

enum ColumnPlan {
    Pk(usize),
    Fk(KeyDomain),
    Gen(ColumnGenerator),
}

/// Everything needed to produce any row of one table.
pub struct TablePlan {
    pub table: TableDef,
    pk_domains: Vec<KeyDomain>,
    columns: Vec<ColumnPlan>,
    table_seed: u64,
    rows: u64,
}

impl TablePlan {
    pub fn new(
        table: &TableDef,
        domains: &TableDomains,
        stats: &TableCharacteristics,
        seed: u64,
    ) -> Result<Self, DbGenError> {
        let pk_domains: Vec<KeyDomain> = table.primary_key.iter().map(|c| domains[c]).collect();
        let mut columns = Vec::with_capacity(table.columns.len());
        for col in &table.columns {
            let plan = if let Some(i) = table.primary_key.iter().position(|c| c == &col.name) {
                ColumnPlan::Pk(i)
            } else if let Some(d) = domains.get(&col.name) {
                ColumnPlan::Fk(*d)
            } else {
                let cc = stats.column(&col.name).ok_or_else(|| {
                    DbGenError::MissingColumn(format!("{}.{}", table.name, col.name))
                })?;
                ColumnPlan::Gen(make_column_generator(
                    cc,
                    seed::derive_str(seed, &table.name),
                ))
            };
            columns.push(plan);
        }
        let rows = pk_domains.iter().map(|d| d.len()).product();
        Ok(TablePlan {
            table: table.clone(),
            pk_domains,
            columns,
            table_seed: seed::derive_str(seed, &table.name),
            rows,
        })
    }

    /// Number of rows: the product of the primary-key component domains.
    pub fn row_count(&self) -> u64 {
        self.rows
    }

    pub fn generator(&self, column: &str) -> Option<&ColumnGenerator> {
        let i = self.table.column_index(column)?;
        match &self.columns[i] {
            ColumnPlan::Gen(g) => Some(g),
            _ => None,
        }
    }

    /// Domain of a primary- or foreign-key column.
    pub fn key_domain(&self, column: &str) -> Option<KeyDomain> {
        let i = self.table.column_index(column)?;
        match &self.columns[i] {
            ColumnPlan::Pk(k) => Some(self.pk_domains[*k]),
            ColumnPlan::Fk(d) => Some(*d),
            ColumnPlan::Gen(_) => None,
        }
    }

    /// Primary key of the row with 1-based rank, enumerated lexicographically.
    pub fn pk_at(&self, rank: u64) -> Vec<i64> {
        let mut rest = rank - 1;
        let mut out = vec![0; self.pk_domains.len()];
        for (slot, d) in out.iter_mut().zip(&self.pk_domains).rev() {
            *slot = d.lo + (rest % d.len()) as i64;
            rest /= d.len();
        }
        out
    }

    /// Inverse of [`pk_at`](Self::pk_at); `None` if the key is outside the domains.
    pub fn rank_of(&self, pk: &[i64]) -> Option<u64> {
        if pk.len() != self.pk_domains.len() {
            return None;
        }
        let mut rank = 0u64;
        for (v, d) in pk.iter().zip(&self.pk_domains) {
            if !d.contains(*v) {
                return None;
            }
            rank = rank * d.len() + (v - d.lo) as u64;
        }
        Some(rank + 1)
    }

    pub fn row(&self, rank: u64) -> Vec<Value> {
        let pk = self.pk_at(rank);
        let mut rng = seed::rng(seed::derive(self.table_seed, &[rank]));
        self.columns
            .iter()
            .map(|c| match c {
                ColumnPlan::Pk(i) => Value::Int(pk[*i]),
                ColumnPlan::Fk(d) => Value::Int(rng.random_range(d.lo..=d.hi)),
                ColumnPlan::Gen(g) => g.draw(&mut rng),
            })
            .collect()
    }

    pub fn row_by_key(&self, pk: &[i64]) -> Option<Vec<Value>> {
        self.rank_of(pk).map(|r| self.row(r))
    }

    /// Rows with ranks in `lo..=hi`, in key order.
    pub fn rows(
        &self,
        lo: u64,
        hi: u64,
    ) -> Result<impl Iterator<Item = Vec<Value>> + '_, DbGenError> {
        if lo < 1 || hi > self.rows || lo > hi + 1 {
            return Err(DbGenError::BadRange {
                table: self.table.name.clone(),
                lo,
                hi,
                rows: self.rows,
            });
        }
        Ok((lo..=hi).map(move |r| self.row(r)))
    }
}

/// A generated database addressable by primary key without materializing it.
pub struct SyntheticDatabase {
    pub tables: BTreeMap<String, TablePlan>,
}

impl SyntheticDatabase {
    pub fn new(
        schema: &Schema,
        stats: &[TableCharacteristics],
        seed: u64,
    ) -> Result<Self, DbGenError> {
        let sizes: BTreeMap<String, u64> =
            stats.iter().map(|t| (t.table.clone(), t.size)).collect();
        let domains = derive_key_domains(schema, &sizes)?;
        let mut tables = BTreeMap::new();
        for t in &schema.tables {
            let st = stats
                .iter()
                .find(|s| s.table == t.name)
                .ok_or_else(|| DbGenError::MissingSize(t.name.clone()))?;
            tables.insert(
                t.name.clone(),
                TablePlan::new(t, &domains[&t.name], st, seed)?,
            );
        }
        Ok(SyntheticDatabase { tables })
    }

    pub fn table(&self, name: &str) -> Option<&TablePlan> {
        self.tables.get(name)
    }

    pub fn domains(&self, table: &str) -> Option<Vec<(String, KeyDomain)>> {
        let plan = self.tables.get(table)?;
        Some(
            plan.table
                .primary_key
                .iter()
                .cloned()
                .zip(plan.pk_domains.iter().copied())
                .collect(),
        )
    }

    /// Writes `<dir>/<table>.csv` for every table; rows are built in parallel
    /// blocks and written in key order.
    pub fn write_csv(&self, dir: &Path, parallelism: usize) -> Result<(), DbGenError> {
        std::fs::create_dir_all(dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        pool.install(|| {
            for plan in self.tables.values() {
                write_table(
                    plan,
                    &dir.join(format!("{}.csv", plan.table.name)),
                    parallelism.max(1),
                )?;
            }
            Ok(())
        })
    }
}

const BLOCK_ROWS: u64 = 4096;

fn write_table(plan: &TablePlan, path: &Path, parallelism: usize) -> Result<(), DbGenError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = plan.table.columns.iter().map(|c| c.name.as_str()).collect();
    writeln!(out, "{}", header.join(","))?;
    let total = plan.row_count();
    let chunk = BLOCK_ROWS * parallelism as u64;
    let mut start = 1;
    while start <= total {
        let end = (start + chunk - 1).min(total);
        let blocks: Vec<(u64, u64)> = (start..=end)
            .step_by(BLOCK_ROWS as usize)
            .map(|b| (b, (b + BLOCK_ROWS - 1).min(end)))
            .collect();
        let texts: Vec<String> = blocks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut s = String::new();
                for r in lo..=hi {
                    write_row(&mut s, &plan.row(r));
                }
                s
            })
            .collect();
        for t in texts {
            out.write_all(t.as_bytes())?;
        }
        start = end + 1;
    }
    out.flush()?;
    Ok(())
}

fn write_row(s: &mut String, row: &[Value]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        match v {
            Value::Int(x) => write!(s, "{x}").unwrap(),
            Value::Dec(x) => write!(s, "{x}").unwrap(),
            Value::Str(x) if x.contains([',', '"', '\n']) => {
                write!(s, "\"{}\"", x.replace('"', "\"\"")).unwrap()
            }
            Value::Str(x) => s.push_str(x),
        }
    }
    s.push('\n');
}

use std::collections::HashSet;
use std::fmt;

use super::lex::{tokenize, Cursor, Tok};
use super::schema::Schema;
use super::{quote, ColumnRef, DataType, ModelError, ParamRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Select,
    Update,
    Insert,
    Delete,
    ProcCall,
}

impl OpKind {
    fn from_sql(sql: &str) -> Option<OpKind> {
        let first = sql
            .trim_start()
            .trim_start_matches('{')
            .split(|c: char| !c.is_alphanumeric())
            .next()?
            .to_ascii_lowercase();
        match first.as_str() {
            "select" => Some(OpKind::Select),
            "update" => Some(OpKind::Update),
            "insert" | "replace" => Some(OpKind::Insert),
            "delete" => Some(OpKind::Delete),
            "call" | "exec" | "execute" => Some(OpKind::ProcCall),
            _ => None,
        }
    }

    pub fn is_write(self) -> bool {
        !matches!(self, OpKind::Select)
    }
}

/// What the operation's predicate filters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    PrimaryKey,
    NonKey,
    None,
}

impl FilterKind {
    fn as_str(self) -> &'static str {
        match self {
            FilterKind::PrimaryKey => "pk",
            FilterKind::NonKey => "nonkey",
            FilterKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub column: Option<ColumnRef>,
    pub data_type: DataType,
    /// Predicate (or inserted-key) parameter; these index the data and are
    /// the only parameters kept in light traces.
    pub pivotal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReturnSlot {
    pub column: ColumnRef,
    pub data_type: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlOp {
    pub index: usize,
    pub sql: String,
    pub kind: OpKind,
    pub params: Vec<ParamSlot>,
    pub returns: Vec<ReturnSlot>,
    pub filter: FilterKind,
}

impl SqlOp {
    pub fn param_ref(&self, pos: usize) -> ParamRef {
        ParamRef::new(self.index, pos)
    }

    /// 1-based positions `(l, j)` of parameter pairs written as
    /// `between ? and ?` in the SQL text.
    pub fn between_pairs(&self) -> Vec<(usize, usize)> {
        let words = sql_words(&self.sql);
        let mut out = Vec::new();
        let mut ordinal = 0;
        for (k, w) in words.iter().enumerate() {
            if w == "?" {
                ordinal += 1;
                let is_pair = k >= 1
                    && words[k - 1] == "between"
                    && words.get(k + 1).map(String::as_str) == Some("and")
                    && words.get(k + 2).map(String::as_str) == Some("?");
                if is_pair {
                    out.push((ordinal, ordinal + 1));
                }
            }
        }
        out
    }

    pub fn pivotal_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.pivotal)
            .map(|(i, _)| i + 1)
    }

    /// The table the operation reads or writes, taken from its bindings.
    pub fn table(&self) -> Option<&str> {
        self.params
            .iter()
            .filter_map(|p| p.column.as_ref())
            .chain(self.returns.iter().map(|r| &r.column))
            .map(|c| c.table.as_str())
            .next()
    }
}

/// Splits SQL into lowercase words and `?` markers, skipping quoted literals.
fn sql_words(sql: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut in_quote = false;
    for c in sql.chars() {
        if in_quote {
            if c == '\'' {
                in_quote = false;
            }
            continue;
        }
        if c == '\'' {
            in_quote = true;
        }
        if c.is_alphanumeric() || c == '_' {
            word.push(c.to_ascii_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if c == '?' {
            out.push("?".into());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

pub(crate) fn placeholder_count(sql: &str) -> usize {
    sql_words(sql).iter().filter(|w| *w == "?").count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateNode {
    Op(SqlOp),
    /// Mutually exclusive alternatives; exactly one runs per instance.
    Branch(Vec<Vec<SqlOp>>),
    /// A counted loop over its body.
    Loop(Vec<SqlOp>),
}

/// Where an operation sits in its template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpLocation {
    Plain,
    /// `branch` is the 1-based branch number, `alt` the 0-based alternative.
    Branch {
        branch: usize,
        alt: usize,
    },
    /// 1-based loop number.
    Loop {
        lp: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionTemplate {
    pub name: String,
    pub body: Vec<TemplateNode>,
}

impl TransactionTemplate {
    pub fn ops(&self) -> Vec<&SqlOp> {
        let mut out = Vec::new();
        for node in &self.body {
            match node {
                TemplateNode::Op(op) => out.push(op),
                TemplateNode::Branch(alts) => out.extend(alts.iter().flatten()),
                TemplateNode::Loop(body) => out.extend(body.iter()),
            }
        }
        out
    }

    pub fn op_count(&self) -> usize {
        self.ops().len()
    }

    pub fn op(&self, index: usize) -> Option<&SqlOp> {
        self.ops().into_iter().find(|o| o.index == index)
    }

    pub fn location(&self, index: usize) -> Option<OpLocation> {
        let (mut nb, mut nl) = (0, 0);
        for node in &self.body {
            match node {
                TemplateNode::Op(op) if op.index == index => return Some(OpLocation::Plain),
                TemplateNode::Op(_) => {}
                TemplateNode::Branch(alts) => {
                    nb += 1;
                    for (alt, ops) in alts.iter().enumerate() {
                        if ops.iter().any(|o| o.index == index) {
                            return Some(OpLocation::Branch { branch: nb, alt });
                        }
                    }
                }
                TemplateNode::Loop(body) => {
                    nl += 1;
                    if body.iter().any(|o| o.index == index) {
                        return Some(OpLocation::Loop { lp: nl });
                    }
                }
            }
        }
        None
    }

    pub fn in_loop(&self, index: usize) -> bool {
        matches!(self.location(index), Some(OpLocation::Loop { .. }))
    }

    pub fn branches(&self) -> Vec<&Vec<Vec<SqlOp>>> {
        self.body
            .iter()
            .filter_map(|n| match n {
                TemplateNode::Branch(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn loops(&self) -> Vec<&Vec<SqlOp>> {
        self.body
            .iter()
            .filter_map(|n| match n {
                TemplateNode::Loop(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    /// Every declared parameter reference, in template order.
    pub fn param_refs(&self) -> Vec<ParamRef> {
        self.ops()
            .iter()
            .flat_map(|op| (1..=op.params.len()).map(move |j| op.param_ref(j)))
            .collect()
    }

    pub fn slot(&self, p: ParamRef) -> Option<&ParamSlot> {
        self.op(p.op)
            .and_then(|op| op.params.get(p.pos.checked_sub(1)?))
    }

    /// Checks column bindings and primary-key filters against a schema.
    pub fn validate_against(&self, schema: &Schema) -> Result<(), ModelError> {
        for op in self.ops() {
            let cols = op
                .params
                .iter()
                .filter_map(|p| p.column.as_ref())
                .chain(op.returns.iter().map(|r| &r.column));
            for c in cols {
                let table = schema
                    .table(&c.table)
                    .ok_or_else(|| ModelError::UnknownTable(c.table.clone()))?;
                if table.column(&c.column).is_none() {
                    return Err(ModelError::UnknownColumn(c.to_string()));
                }
            }
            if op.filter == FilterKind::PrimaryKey {
                let table_name = op.table().ok_or(ModelError::InvalidOp {
                    op: op.index,
                    msg: "primary-key filter without a bound table".into(),
                })?;
                let table = schema.table(table_name).expect("checked above");
                let covered: HashSet<&str> = op
                    .params
                    .iter()
                    .filter(|p| p.pivotal)
                    .filter_map(|p| p.column.as_ref())
                    .filter(|c| c.table == table_name)
                    .map(|c| c.column.as_str())
                    .collect();
                if !table
                    .primary_key
                    .iter()
                    .all(|k| covered.contains(k.as_str()))
                {
                    return Err(ModelError::InvalidOp {
                        op: op.index,
                        msg: format!("predicate does not cover the primary key of {table_name}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parses a template file.
///
/// ```text
/// TEMPLATE name {
///   "update S set s3 = s3 + ? where s1 = ?" params(S.s3:decimal, where S.s1:integer) filter=pk;
///   BRANCH { { op; } | { op; op; } };
///   LOOP { op; };
/// }
/// ```
pub fn parse_templates(text: &str) -> Result<Vec<TransactionTemplate>, ModelError> {
    let mut cur = Cursor::new(tokenize(text)?);
    let mut out: Vec<TransactionTemplate> = Vec::new();
    while !cur.at_end() {
        let t = parse_template(&mut cur)?;
        if out.iter().any(|o| o.name == t.name) {
            return Err(ModelError::Duplicate(t.name));
        }
        out.push(t);
    }
    Ok(out)
}

fn parse_template(cur: &mut Cursor) -> Result<TransactionTemplate, ModelError> {
    cur.expect_keyword("TEMPLATE")?;
    let name = cur.expect_ident()?;
    cur.expect_punct('{')?;
    let mut next_index = 1;
    let mut body = Vec::new();
    while !cur.eat_punct('}') {
        if cur.at_end() {
            return Err(cur.err("unterminated template body"));
        }
        if cur.eat_keyword("BRANCH") {
            cur.expect_punct('{')?;
            let mut alts = vec![parse_block(cur, &mut next_index)?];
            while cur.eat_punct('|') {
                alts.push(parse_block(cur, &mut next_index)?);
            }
            cur.expect_punct('}')?;
            if alts.len() < 2 {
                return Err(cur.err("BRANCH needs at least two alternatives"));
            }
            body.push(TemplateNode::Branch(alts));
        } else if cur.eat_keyword("LOOP") {
            let ops = parse_block(cur, &mut next_index)?;
            if ops.is_empty() {
                return Err(cur.err("empty LOOP"));
            }
            body.push(TemplateNode::Loop(ops));
        } else {
            body.push(TemplateNode::Op(parse_op(cur, &mut next_index)?));
        }
        cur.eat_punct(';');
    }
    cur.eat_punct(';');
    Ok(TransactionTemplate { name, body })
}

fn parse_block(cur: &mut Cursor, next_index: &mut usize) -> Result<Vec<SqlOp>, ModelError> {
    cur.expect_punct('{')?;
    let mut ops = Vec::new();
    while !cur.eat_punct('}') {
        if cur.is_keyword("BRANCH") || cur.is_keyword("LOOP") {
            return Err(cur.err("BRANCH and LOOP may not nest"));
        }
        ops.push(parse_op(cur, next_index)?);
        cur.eat_punct(';');
    }
    Ok(ops)
}

fn parse_op(cur: &mut Cursor, next_index: &mut usize) -> Result<SqlOp, ModelError> {
    let sql = match cur.next() {
        Some(Tok::Str(s)) => s,
        _ => return Err(cur.err("expected quoted SQL text")),
    };
    let index = *next_index;
    *next_index += 1;
    let kind = OpKind::from_sql(&sql).ok_or_else(|| ModelError::InvalidOp {
        op: index,
        msg: "unrecognized statement kind".into(),
    })?;
    let mut params = Vec::new();
    let mut returns = Vec::new();
    let mut filter = None;
    loop {
        if cur.eat_keyword("params") {
            cur.expect_punct('(')?;
            if !cur.eat_punct(')') {
                loop {
                    params.push(parse_slot(cur)?);
                    if cur.eat_punct(')') {
                        break;
                    }
                    cur.expect_punct(',')?;
                }
            }
        } else if cur.eat_keyword("filter") {
            cur.expect_punct('=')?;
            let f = cur.expect_ident()?;
            filter = Some(match f.to_ascii_lowercase().as_str() {
                "pk" => FilterKind::PrimaryKey,
                "nonkey" => FilterKind::NonKey,
                "none" => FilterKind::None,
                other => return Err(cur.err(format!("unknown filter kind {other}"))),
            });
        } else if cur.peek() == Some(&Tok::Arrow) {
            cur.next();
            cur.expect_keyword("returns")?;
            cur.expect_punct('(')?;
            loop {
                let column = parse_column(cur)?;
                let data_type = if cur.eat_punct(':') {
                    parse_type(cur)?
                } else {
                    DataType::Decimal
                };
                returns.push(ReturnSlot { column, data_type });
                if cur.eat_punct(')') {
                    break;
                }
                cur.expect_punct(',')?;
            }
        } else {
            break;
        }
    }
    if placeholder_count(&sql) != params.len() {
        return Err(ModelError::PlaceholderMismatch(index));
    }
    let filter = filter.unwrap_or(if params.iter().any(|p| p.pivotal) {
        FilterKind::NonKey
    } else {
        FilterKind::None
    });
    Ok(SqlOp {
        index,
        sql,
        kind,
        params,
        returns,
        filter,
    })
}

fn parse_slot(cur: &mut Cursor) -> Result<ParamSlot, ModelError> {
    let pivotal = cur.eat_keyword("where") || cur.eat_keyword("key");
    let column = if cur.is_keyword("_") {
        cur.next();
        None
    } else {
        Some(parse_column(cur)?)
    };
    cur.expect_punct(':')?;
    let data_type = parse_type(cur)?;
    Ok(ParamSlot {
        column,
        data_type,
        pivotal,
    })
}

fn parse_column(cur: &mut Cursor) -> Result<ColumnRef, ModelError> {
    let table = cur.expect_ident()?;
    cur.expect_punct('.')?;
    let column = cur.expect_ident()?;
    Ok(ColumnRef { table, column })
}

fn parse_type(cur: &mut Cursor) -> Result<DataType, ModelError> {
    let line = cur.line();
    cur.expect_ident()?
        .parse()
        .map_err(|e: String| ModelError::syntax(line, e))
}

struct OpDisplay<'a>(&'a SqlOp);

impl fmt::Display for OpDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0;
        write!(f, "{}", quote(&op.sql))?;
        if !op.params.is_empty() {
            let slots: Vec<String> = op
                .params
                .iter()
                .map(|p| {
                    let col = p.column.as_ref().map_or("_".to_string(), |c| c.to_string());
                    let marker = if p.pivotal { "where " } else { "" };
                    format!("{marker}{col}:{}", p.data_type)
                })
                .collect();
            write!(f, " params({})", slots.join(", "))?;
        }
        write!(f, " filter={}", op.filter.as_str())?;
        if !op.returns.is_empty() {
            let rets: Vec<String> = op
                .returns
                .iter()
                .map(|r| format!("{}:{}", r.column, r.data_type))
                .collect();
            write!(f, " -> returns({})", rets.join(", "))?;
        }
        Ok(())
    }
}

impl fmt::Display for TransactionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "TEMPLATE {} {{", self.name)?;
        for node in &self.body {
            match node {
                TemplateNode::Op(op) => writeln!(f, "  {};", OpDisplay(op))?,
                TemplateNode::Branch(alts) => {
                    writeln!(f, "  BRANCH {{")?;
                    for (k, alt) in alts.iter().enumerate() {
                        write!(f, "    {}{{ ", if k == 0 { "" } else { "| " })?;
                        for op in alt {
                            write!(f, "{}; ", OpDisplay(op))?;
                        }
                        writeln!(f, "}}")?;
                    }
                    writeln!(f, "  }};")?;
                }
                TemplateNode::Loop(body) => {
                    write!(f, "  LOOP {{ ")?;
                    for op in body {
                        write!(f, "{}; ", OpDisplay(op))?;
                    }
                    writeln!(f, "}};")?;
                }
            }
        }
        writeln!(f, "}}")
    }
}

pub fn serialize_templates(templates: &[TransactionTemplate]) -> String {
    templates
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

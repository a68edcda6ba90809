//! Line-delimited workload traces.
//!
//! Heavy line:
//! `ts=<ms> [w=<worker>] tpl=<name> op=<i>#<ordinal> params=[v,...] rows=[[v,...],...] op=...`
//!
//! Light lines have the same shape without `rows`; non-pivotal parameters
//! are written as `_`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;

use super::template::TransactionTemplate;
use super::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub op: usize,
    /// 1-based execution ordinal within the instance (loop runs count up).
    pub ordinal: u32,
    pub params: Vec<Value>,
    pub rows: Vec<Vec<Value>>,
}

/// One logged execution of a transaction with every parameter and return row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionInstance {
    pub template: String,
    pub timestamp: u64,
    pub worker: Option<u32>,
    pub ops: Vec<OpRecord>,
}

impl TransactionInstance {
    /// First execution of an operation.
    pub fn first(&self, op: usize) -> Option<&OpRecord> {
        self.ops.iter().find(|r| r.op == op)
    }

    pub fn executions(&self, op: usize) -> impl Iterator<Item = &OpRecord> {
        self.ops.iter().filter(move |r| r.op == op)
    }

    /// Projects onto pivotal parameters only.
    pub fn to_light(&self, template: &TransactionTemplate) -> LightTraceRecord {
        let ops = self
            .ops
            .iter()
            .map(|r| {
                let slots = template
                    .op(r.op)
                    .map(|o| o.params.as_slice())
                    .unwrap_or(&[]);
                let params = r
                    .params
                    .iter()
                    .enumerate()
                    .map(|(j, v)| slots.get(j).filter(|s| s.pivotal).map(|_| v.clone()))
                    .collect();
                LightOp {
                    op: r.op,
                    ordinal: r.ordinal,
                    params,
                }
            })
            .collect();
        LightTraceRecord {
            template: self.template.clone(),
            timestamp: self.timestamp,
            worker: self.worker,
            ops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LightOp {
    pub op: usize,
    pub ordinal: u32,
    /// `None` for non-pivotal parameters.
    pub params: Vec<Option<Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LightTraceRecord {
    pub template: String,
    pub timestamp: u64,
    pub worker: Option<u32>,
    pub ops: Vec<LightOp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    Heavy(TransactionInstance),
    Light(LightTraceRecord),
}

impl TraceRecord {
    pub fn template(&self) -> &str {
        match self {
            TraceRecord::Heavy(h) => &h.template,
            TraceRecord::Light(l) => &l.template,
        }
    }

    pub fn timestamp(&self) -> u64 {
        match self {
            TraceRecord::Heavy(h) => h.timestamp,
            TraceRecord::Light(l) => l.timestamp,
        }
    }

    pub fn into_heavy(self) -> Option<TransactionInstance> {
        match self {
            TraceRecord::Heavy(h) => Some(h),
            TraceRecord::Light(_) => None,
        }
    }

    /// Light view of the record; heavy records keep every parameter.
    pub fn into_light(self) -> LightTraceRecord {
        match self {
            TraceRecord::Light(l) => l,
            TraceRecord::Heavy(h) => LightTraceRecord {
                template: h.template,
                timestamp: h.timestamp,
                worker: h.worker,
                ops: h
                    .ops
                    .into_iter()
                    .map(|r| LightOp {
                        op: r.op,
                        ordinal: r.ordinal,
                        params: r.params.into_iter().map(Some).collect(),
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Heavy,
    Light,
}

/// Streaming trace reader. Malformed lines are skipped and counted.
pub struct TraceReader<'t, R> {
    input: R,
    mode: TraceMode,
    line_no: usize,
    malformed: Vec<usize>,
    templates: Option<HashMap<&'t str, &'t TransactionTemplate>>,
    buf: String,
}

pub fn read_trace<R: BufRead>(input: R, mode: TraceMode) -> TraceReader<'static, R> {
    TraceReader {
        input,
        mode,
        line_no: 0,
        malformed: Vec::new(),
        templates: None,
        buf: String::new(),
    }
}

impl<'t, R: BufRead> TraceReader<'t, R> {
    /// Also rejects records that do not match their template's shape.
    pub fn validate_with<'u>(self, templates: &'u [TransactionTemplate]) -> TraceReader<'u, R> {
        TraceReader {
            input: self.input,
            mode: self.mode,
            line_no: self.line_no,
            malformed: self.malformed,
            templates: Some(templates.iter().map(|t| (t.name.as_str(), t)).collect()),
            buf: self.buf,
        }
    }

    pub fn malformed_count(&self) -> usize {
        self.malformed.len()
    }

    /// Line numbers (1-based) of skipped records.
    pub fn malformed_lines(&self) -> &[usize] {
        &self.malformed
    }

    fn check(&self, rec: &TraceRecord) -> bool {
        let Some(templates) = &self.templates else {
            return true;
        };
        let Some(tpl) = templates.get(rec.template()) else {
            return false;
        };
        let mut next_ordinal: HashMap<usize, u32> = HashMap::new();
        // (op, ordinal, parameter count, rows)
        type Shape<'r> = (usize, u32, usize, Option<&'r Vec<Vec<Value>>>);
        let shape: Vec<Shape> = match rec {
            TraceRecord::Heavy(h) => h
                .ops
                .iter()
                .map(|r| (r.op, r.ordinal, r.params.len(), Some(&r.rows)))
                .collect(),
            TraceRecord::Light(l) => l
                .ops
                .iter()
                .map(|r| (r.op, r.ordinal, r.params.len(), None))
                .collect(),
        };
        for (op, ordinal, nparams, rows) in shape {
            let Some(def) = tpl.op(op) else { return false };
            if def.params.len() != nparams {
                return false;
            }
            if let Some(rows) = rows {
                if rows.iter().any(|row| row.len() != def.returns.len()) {
                    return false;
                }
            }
            let expected = next_ordinal.entry(op).or_insert(1);
            if ordinal != *expected || (ordinal > 1 && !tpl.in_loop(op)) {
                return false;
            }
            *expected += 1;
        }
        true
    }
}

impl<R: BufRead> Iterator for TraceReader<'_, R> {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(_) => {
                    self.line_no += 1;
                    self.malformed.push(self.line_no);
                    continue;
                }
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_line(line, self.mode) {
                Some(rec) if self.check(&rec) => return Some(rec),
                _ => self.malformed.push(self.line_no),
            }
        }
    }
}

/// Parses one trace line in the given mode.
pub fn parse_line(line: &str, mode: TraceMode) -> Option<TraceRecord> {
    let fields = split_fields(line)?;
    let mut it = fields.into_iter().peekable();
    let (k, v) = it.next()?;
    if k != "ts" {
        return None;
    }
    let timestamp = v.parse().ok()?;
    let mut worker = None;
    if it.peek().map(|(k, _)| *k) == Some("w") {
        worker = Some(it.next()?.1.parse().ok()?);
    }
    let (k, template) = it.next()?;
    if k != "tpl" || template.is_empty() {
        return None;
    }
    let template = template.to_string();

    let mut heavy_ops = Vec::new();
    let mut light_ops = Vec::new();
    while let Some((k, v)) = it.next() {
        if k != "op" {
            return None;
        }
        let (op, ordinal) = v.split_once('#')?;
        let op: usize = op.parse().ok()?;
        let ordinal: u32 = ordinal.parse().ok()?;
        if op == 0 || ordinal == 0 {
            return None;
        }
        let (k, params) = it.next()?;
        if k != "params" {
            return None;
        }
        let params = parse_list(params)?;
        let rows = if it.peek().map(|(k, _)| *k) == Some("rows") {
            Some(parse_rows(it.next()?.1)?)
        } else {
            None
        };
        match mode {
            TraceMode::Heavy => {
                let params: Option<Vec<Value>> = params.into_iter().collect();
                heavy_ops.push(OpRecord {
                    op,
                    ordinal,
                    params: params?,
                    rows: rows?,
                });
            }
            TraceMode::Light => light_ops.push(LightOp {
                op,
                ordinal,
                params,
            }),
        }
    }
    Some(match mode {
        TraceMode::Heavy => TraceRecord::Heavy(TransactionInstance {
            template,
            timestamp,
            worker,
            ops: heavy_ops,
        }),
        TraceMode::Light => TraceRecord::Light(LightTraceRecord {
            template,
            timestamp,
            worker,
            ops: light_ops,
        }),
    })
}

/// Splits `k=v` fields separated by whitespace, keeping brackets and quoted
/// strings intact.
pub(crate) fn split_fields(line: &str) -> Option<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            break;
        }
        let key_start = i;
        while i < bytes.len() && bytes[i] != b'=' && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() || bytes[i] != b'=' {
            return None;
        }
        let key = &line[key_start..i];
        i += 1;
        let val_start = i;
        let mut depth = 0i32;
        let mut in_str = false;
        while i < bytes.len() {
            let c = bytes[i];
            if in_str {
                if c == b'\\' {
                    i += 1;
                } else if c == b'"' {
                    in_str = false;
                }
            } else if c == b'"' {
                in_str = true;
            } else if c == b'[' {
                depth += 1;
            } else if c == b']' {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            } else if c.is_ascii_whitespace() && depth == 0 {
                break;
            }
            i += 1;
        }
        if in_str || depth != 0 {
            return None;
        }
        out.push((key, &line[val_start..i]));
    }
    Some(out)
}

/// Splits the inside of a bracketed list at top-level commas.
pub(crate) fn split_top(inner: &str) -> Option<Vec<&str>> {
    let mut out = Vec::new();
    let bytes = inner.as_bytes();
    let (mut depth, mut in_str, mut start) = (0i32, false, 0);
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if in_str {
            if c == b'\\' {
                i += 1;
            } else if c == b'"' {
                in_str = false;
            }
        } else {
            match c {
                b'"' => in_str = true,
                b'[' => depth += 1,
                b']' => depth -= 1,
                b',' if depth == 0 => {
                    out.push(inner[start..i].trim());
                    start = i + 1;
                }
                _ => {}
            }
        }
        i += 1;
    }
    if in_str || depth != 0 {
        return None;
    }
    let last = inner[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    Some(out)
}

pub(crate) fn brackets(s: &str) -> Option<&str> {
    s.trim().strip_prefix('[')?.strip_suffix(']')
}

fn parse_list(s: &str) -> Option<Vec<Option<Value>>> {
    split_top(brackets(s)?)?
        .into_iter()
        .map(|tok| {
            if tok == "_" {
                Some(None)
            } else {
                Value::parse_token(tok).map(Some)
            }
        })
        .collect()
}

fn parse_rows(s: &str) -> Option<Vec<Vec<Value>>> {
    split_top(brackets(s)?)?
        .into_iter()
        .map(|row| {
            split_top(brackets(row)?)?
                .into_iter()
                .map(Value::parse_token)
                .collect()
        })
        .collect()
}

fn write_values<'a>(out: &mut String, vals: impl Iterator<Item = Option<&'a Value>>) {
    out.push('[');
    for (k, v) in vals.enumerate() {
        if k > 0 {
            out.push(',');
        }
        match v {
            Some(v) => write!(out, "{v}").expect("String write"),
            None => out.push('_'),
        }
    }
    out.push(']');
}

fn write_header(out: &mut String, ts: u64, worker: Option<u32>, template: &str) {
    write!(out, "ts={ts}").expect("String write");
    if let Some(w) = worker {
        write!(out, " w={w}").expect("String write");
    }
    write!(out, " tpl={template}").expect("String write");
}

impl fmt::Display for TransactionInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_header(&mut out, self.timestamp, self.worker, &self.template);
        for r in &self.ops {
            write!(out, " op={}#{} params=", r.op, r.ordinal)?;
            write_values(&mut out, r.params.iter().map(Some));
            out.push_str(" rows=[");
            for (k, row) in r.rows.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_values(&mut out, row.iter().map(Some));
            }
            out.push(']');
        }
        f.write_str(&out)
    }
}

impl fmt::Display for LightTraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_header(&mut out, self.timestamp, self.worker, &self.template);
        for r in &self.ops {
            write!(out, " op={}#{} params=", r.op, r.ordinal)?;
            write_values(&mut out, r.params.iter().map(Option::as_ref));
        }
        f.write_str(&out)
    }
}

//! Synthetic transaction driver.
//!
//! Workers run in virtual time: each picks a template from the current
//! window's mix, walks its structure, instantiates parameters (transaction
//! logic first, access distribution second), submits the operations to an
//! [`ExecutionTarget`] and advances its clock by service plus think time.
//! Every executed transaction is emitted as a heavy trace record.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::chars::TableCharacteristics;
use crate::dbgen::{seed_strings, ColumnGenerator, SyntheticDatabase};
use crate::dist::{
    candidate_series, CandidateWindow, DistFile, DistMode, MixWindow, ParamKey, ParamSampler,
    SDist, SamplerOptions, ValueSpace, WindowStats,
};
use crate::logic::{DepKind, DepSource, ParamLogic, TransactionLogic};
use crate::model::{
    DataType, FilterKind, OpKind, OpRecord, ParamRef, ParamSlot, ReturnRef, SqlOp, TemplateNode,
    TransactionInstance, TransactionTemplate, Value,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{param} of {template} depends on {from}, which is not instantiated before it")]
    MissingSource {
        template: String,
        param: ParamRef,
        from: String,
    },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("transaction mix has no transactions")]
    EmptySchedule,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TargetError {
    #[error("rejected: {0}")]
    Rejected(String),
}

/// Where generated operations go.
pub trait ExecutionTarget {
    fn begin(&mut self, _worker: u32) -> Result<(), TargetError> {
        Ok(())
    }

    /// Executes one operation and returns its result rows.
    fn submit(&mut self, op: &SqlOp, params: &[Value]) -> Result<Vec<Vec<Value>>, TargetError>;

    fn commit(&mut self) -> Result<(), TargetError> {
        Ok(())
    }

    fn abort(&mut self) {}
}

/// Accepts everything and returns no rows.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullTarget;

impl ExecutionTarget for NullTarget {
    fn submit(&mut self, _op: &SqlOp, _params: &[Value]) -> Result<Vec<Vec<Value>>, TargetError> {
        Ok(Vec::new())
    }
}

/// Answers reads from a synthetic database without materializing it.
///
/// Primary-key reads return the addressed row. Other reads return between
/// one and `max_rows` rows chosen by a hash of the parameters, so equal
/// predicates see equal results.
#[derive(Clone)]
pub struct DbTarget {
    db: Arc<SyntheticDatabase>,
    max_rows: u64,
}

impl DbTarget {
    pub fn new(db: Arc<SyntheticDatabase>, max_rows: u64) -> Self {
        DbTarget {
            db,
            max_rows: max_rows.max(1),
        }
    }
}

impl ExecutionTarget for DbTarget {
    fn submit(&mut self, op: &SqlOp, params: &[Value]) -> Result<Vec<Vec<Value>>, TargetError> {
        if op.returns.is_empty() || op.kind.is_write() && op.kind != OpKind::ProcCall {
            return Ok(Vec::new());
        }
        let Some(plan) = op.table().and_then(|t| self.db.table(t)) else {
            return Ok(Vec::new());
        };
        let project = |row: Vec<Value>| -> Vec<Value> {
            op.returns
                .iter()
                .map(|r| {
                    plan.table
                        .column_index(&r.column.column)
                        .map_or(Value::Int(0), |i| row[i].clone())
                })
                .collect()
        };
        if op.filter == FilterKind::PrimaryKey {
            let pk: Option<Vec<i64>> = plan
                .table
                .primary_key
                .iter()
                .map(|c| {
                    let j = op.params.iter().position(|p| {
                        p.pivotal && p.column.as_ref().is_some_and(|b| &b.column == c)
                    })?;
                    params.get(j)?.as_i64()
                })
                .collect();
            return Ok(pk
                .and_then(|pk| plan.row_by_key(&pk))
                .map(project)
                .into_iter()
                .collect());
        }
        let n = plan.row_count();
        if n == 0 {
            return Ok(Vec::new());
        }
        let text: String = params.iter().map(|v| format!("{v},")).collect();
        let mut rng = seed::rng(seed::derive(
            seed::fnv1a(text.as_bytes()),
            &[op.index as u64],
        ));
        let count = rng.random_range(1..=self.max_rows.min(n));
        Ok((0..count)
            .map(|_| project(plan.row(rng.random_range(1..=n))))
            .collect())
    }
}

/// How workers pace transactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExecutionModel {
    /// Issue transactions back to back with no think time.
    NoAwaitInLoop,
    /// Hold a fixed total rate in transactions per second.
    FixedTps(f64),
    /// Scale each window's observed rate.
    ScaleFactor(f64),
}

impl FromStr for ExecutionModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |x: &str| -> Result<f64, String> {
            x.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| format!("bad rate {x}"))
        };
        match s.split_once(':') {
            None if s == "loop" => Ok(ExecutionModel::NoAwaitInLoop),
            Some(("tps", x)) => num(x).map(ExecutionModel::FixedTps),
            Some(("scale", x)) => num(x).map(ExecutionModel::ScaleFactor),
            _ => Err(format!(
                "unknown execution model {s}; expected loop, tps:N or scale:X"
            )),
        }
    }
}

impl fmt::Display for ExecutionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecutionModel::NoAwaitInLoop => f.write_str("loop"),
            ExecutionModel::FixedTps(x) => write!(f, "tps:{x}"),
            ExecutionModel::ScaleFactor(x) => write!(f, "scale:{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub workers: u32,
    /// Id of the first worker; nodes of a multi-node run use disjoint ranges.
    pub first_worker: u32,
    pub model: ExecutionModel,
    pub duration_ms: u64,
    pub seed: u64,
    pub mode: DistMode,
    /// Service time charged per operation in virtual time.
    pub op_cost_ms: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            workers: 1,
            first_worker: 0,
            model: ExecutionModel::NoAwaitInLoop,
            duration_ms: 10_000,
            seed: 0,
            mode: DistMode::C,
            op_cost_ms: 0.5,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.workers == 0 {
            return Err(WorkloadError::BadConfig(
                "at least one worker is required".into(),
            ));
        }
        if !(self.op_cost_ms.is_finite() && self.op_cost_ms >= 0.0) {
            return Err(WorkloadError::BadConfig(
                "operation cost must be non-negative".into(),
            ));
        }
        if matches!(self.model, ExecutionModel::NoAwaitInLoop) && self.op_cost_ms == 0.0 {
            return Err(WorkloadError::BadConfig(
                "back-to-back execution needs a positive operation cost".into(),
            ));
        }
        match self.model {
            ExecutionModel::FixedTps(x) | ExecutionModel::ScaleFactor(x)
                if !(x.is_finite() && x > 0.0) =>
            {
                Err(WorkloadError::BadConfig(format!(
                    "rate must be positive, got {x}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Template proportions and observed rate of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MixEntry {
    pub templates: Vec<String>,
    pub cumulative: Vec<f64>,
    pub tps: f64,
}

/// Per-window transaction mix; windows past the end wrap around.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSchedule {
    pub window_ms: u64,
    windows: Vec<MixEntry>,
}

impl MixSchedule {
    /// One window with fixed proportions.
    pub fn fixed(props: &[(&str, f64)], window_ms: u64, tps: f64) -> Result<Self, WorkloadError> {
        let counts: Vec<(String, f64)> = props.iter().map(|(t, p)| (t.to_string(), *p)).collect();
        let entry = Self::entry_from(&counts, tps).ok_or(WorkloadError::EmptySchedule)?;
        Ok(MixSchedule {
            window_ms,
            windows: vec![entry],
        })
    }

    /// From observed per-window counts. Empty windows keep the previous
    /// proportions at zero rate.
    pub fn from_mix(mix: &[MixWindow], window_ms: u64) -> Result<Self, WorkloadError> {
        let mut windows: Vec<Option<MixEntry>> = mix
            .iter()
            .map(|m| {
                let counts: Vec<(String, f64)> = m
                    .counts
                    .iter()
                    .map(|(t, c)| (t.clone(), *c as f64))
                    .collect();
                Self::entry_from(&counts, m.tps(window_ms))
            })
            .collect();
        let first = windows
            .iter()
            .flatten()
            .next()
            .cloned()
            .ok_or(WorkloadError::EmptySchedule)?;
        let mut last = first;
        for w in windows.iter_mut() {
            match w {
                Some(e) => last = e.clone(),
                None => {
                    *w = Some(MixEntry {
                        tps: 0.0,
                        ..last.clone()
                    })
                }
            }
        }
        Ok(MixSchedule {
            window_ms,
            windows: windows.into_iter().flatten().collect(),
        })
    }

    fn entry_from(counts: &[(String, f64)], tps: f64) -> Option<MixEntry> {
        let total: f64 = counts.iter().map(|c| c.1).sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let mut acc = 0.0;
        let mut templates = Vec::new();
        let mut cumulative = Vec::new();
        for (t, c) in counts.iter().filter(|c| c.1 > 0.0) {
            acc += c / total;
            templates.push(t.clone());
            cumulative.push(acc);
        }
        *cumulative.last_mut()? = 1.0;
        Some(MixEntry {
            templates,
            cumulative,
            tps,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn entry(&self, window: u64) -> &MixEntry {
        &self.windows[(window % self.windows.len() as u64) as usize]
    }

    pub fn proportions(&self, window: u64) -> Vec<(&str, f64)> {
        let e = self.entry(window);
        let mut prev = 0.0;
        e.templates
            .iter()
            .zip(&e.cumulative)
            .map(|(t, c)| {
                let p = c - prev;
                prev = *c;
                (t.as_str(), p)
            })
            .collect()
    }

    pub fn observed_tps(&self, window: u64) -> f64 {
        self.entry(window).tps
    }

    pub fn templates(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .windows
            .iter()
            .flat_map(|w| w.templates.iter().map(String::as_str))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Categorical draw from the window's proportions.
    pub fn pick<R: Rng + ?Sized>(&self, window: u64, rng: &mut R) -> &str {
        let e = self.entry(window);
        let u: f64 = rng.random();
        let i = e
            .cumulative
            .partition_point(|c| *c <= u)
            .min(e.templates.len() - 1);
        &e.templates[i]
    }
}

/// Target rate of a window, or `None` when running back to back.
pub fn target_tps(model: ExecutionModel, schedule: &MixSchedule, window: u64) -> Option<f64> {
    match model {
        ExecutionModel::NoAwaitInLoop => None,
        ExecutionModel::FixedTps(x) => Some(x),
        ExecutionModel::ScaleFactor(s) => Some(s * schedule.observed_tps(window)),
    }
}

/// Think time after a transaction that took `service_ms`, so that
/// `workers` workers together hold the window's target rate. Infinite for
/// a zero-rate window.
pub fn think_time_ms(
    model: ExecutionModel,
    schedule: &MixSchedule,
    window: u64,
    workers: u32,
    service_ms: f64,
) -> f64 {
    match target_tps(model, schedule, window) {
        None => 0.0,
        Some(tps) if tps <= 0.0 => f64::INFINITY,
        Some(tps) => (workers as f64 * 1000.0 / tps - service_ms).max(0.0),
    }
}

/// Parameter values and result rows produced so far in one instance.
#[derive(Debug, Clone, Default)]
pub struct InstanceContext {
    first: HashMap<ParamRef, Value>,
    latest: HashMap<ParamRef, Value>,
    rows: HashMap<usize, Vec<Vec<Value>>>,
}

impl InstanceContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Value of `p` as seen from an operation: the current run for the
    /// same operation, the first execution for earlier ones.
    pub fn param(&self, p: ParamRef, from_op: usize) -> Option<&Value> {
        if p.op == from_op {
            self.latest.get(&p)
        } else {
            self.first.get(&p)
        }
    }

    /// Value of `p` in the previous loop run (before it is overwritten).
    pub fn previous_run(&self, p: ParamRef) -> Option<&Value> {
        self.latest.get(&p)
    }

    pub fn set_param(&mut self, p: ParamRef, v: Value) {
        self.first.entry(p).or_insert_with(|| v.clone());
        self.latest.insert(p, v);
    }

    pub fn set_rows(&mut self, op: usize, rows: Vec<Vec<Value>>) {
        self.rows.entry(op).or_insert(rows);
    }

    /// First-row value of a return item.
    pub fn keyed_return(&self, r: ReturnRef) -> Option<&Value> {
        self.rows.get(&r.op)?.first()?.get(r.pos - 1)
    }

    /// Distinct values of a return item over all rows.
    pub fn return_set(&self, r: ReturnRef) -> Vec<&Value> {
        let mut out: Vec<&Value> = self
            .rows
            .get(&r.op)
            .into_iter()
            .flatten()
            .filter_map(|row| row.get(r.pos - 1))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Fallback value source for a parameter.
#[derive(Debug, Clone)]
pub enum ParamSource {
    Dist(Box<ParamSampler>),
    Space(Arc<ValueSpace>),
}

impl ParamSource {
    pub fn sample<R: Rng + ?Sized>(&self, elapsed_ms: u64, rng: &mut R) -> Value {
        match self {
            ParamSource::Dist(s) => s.sample(elapsed_ms, rng),
            ParamSource::Space(space) => space.value(rng.random_range(1..=space.n().max(1))),
        }
    }
}

/// How a parameter value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instantiation {
    Between,
    LoopDependency,
    Dependency,
    Sampled,
}

fn dep_value<R: Rng + ?Sized>(
    source: DepSource,
    kind: DepKind,
    ctx: &InstanceContext,
    op: usize,
    rng: &mut R,
) -> Option<Value> {
    match (kind, source) {
        (DepKind::Equal, DepSource::Param(p)) => ctx.param(p, op).cloned(),
        (DepKind::Equal, DepSource::Return(r)) => ctx.keyed_return(r).cloned(),
        (DepKind::Inclusive, DepSource::Return(r)) => {
            ctx.return_set(r).choose(rng).map(|v| (*v).clone())
        }
        (DepKind::Inclusive, DepSource::Param(p)) => ctx.param(p, op).cloned(),
        (DepKind::Linear { a, b }, src) => {
            let x = match src {
                DepSource::Param(p) => ctx.param(p, op)?,
                DepSource::Return(r) => ctx.keyed_return(r)?,
            };
            Some(Value::numeric_like(x, a * x.as_f64()? + b))
        }
    }
}

/// Instantiates one parameter.
///
/// A between dependency fixes the value outright. Later loop runs first
/// try the successive-run dependencies by probability. Otherwise one
/// dependency is drawn by probability; unclaimed mass, and dependencies
/// whose source did not run, fall through to `sample`.
pub fn instantiate_param<R: Rng + ?Sized>(
    p: ParamRef,
    logic: Option<&ParamLogic>,
    ctx: &InstanceContext,
    run: u32,
    rng: &mut R,
    sample: &mut dyn FnMut(&mut R) -> Value,
) -> (Value, Instantiation) {
    let Some(logic) = logic else {
        return (sample(rng), Instantiation::Sampled);
    };
    if let Some(b) = &logic.between {
        if let Some(lo) = ctx.param(b.lower, p.op) {
            if let Some(x) = lo.as_f64() {
                return (Value::numeric_like(lo, x + b.delta), Instantiation::Between);
            }
        }
    }
    if run > 1 && !logic.loop_deps.is_empty() {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for d in &logic.loop_deps {
            acc += d.pr;
            if u < acc {
                if let Some(prev) = ctx.previous_run(p) {
                    if let Some(x) = prev.as_f64() {
                        return (
                            Value::numeric_like(prev, d.a * x + d.b),
                            Instantiation::LoopDependency,
                        );
                    }
                }
                break;
            }
        }
    }
    if !logic.deps.is_empty() {
        let total: f64 = logic.deps.iter().map(|d| d.pr).sum::<f64>().max(1.0);
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for d in &logic.deps {
            acc += d.pr;
            if u < acc {
                if let Some(v) = dep_value(d.source, d.kind, ctx, p.op, rng) {
                    return (v, Instantiation::Dependency);
                }
                break;
            }
        }
    }
    (sample(rng), Instantiation::Sampled)
}

/// Checks that every dependency source precedes its target.
pub fn validate_logic(
    tpl: &TransactionTemplate,
    logic: &TransactionLogic,
) -> Result<(), WorkloadError> {
    let order: HashMap<usize, usize> = tpl
        .ops()
        .iter()
        .enumerate()
        .map(|(k, o)| (o.index, k))
        .collect();
    for (p, pl) in &logic.params {
        let missing = |source: String| WorkloadError::MissingSource {
            template: tpl.name.clone(),
            param: *p,
            from: source,
        };
        let Some(&target_at) = order.get(&p.op) else {
            return Err(missing(p.to_string()));
        };
        let sources = pl
            .deps
            .iter()
            .map(|d| d.source)
            .chain(pl.between.iter().map(|b| DepSource::Param(b.lower)));
        for s in sources {
            let ok = match s {
                DepSource::Param(q) => {
                    order
                        .get(&q.op)
                        .is_some_and(|&at| at < target_at || (q.op == p.op && q.pos < p.pos))
                        && tpl.slot(q).is_some()
                }
                DepSource::Return(r) => {
                    order.get(&r.op).is_some_and(|&at| at < target_at)
                        && tpl
                            .op(r.op)
                            .is_some_and(|o| r.pos >= 1 && r.pos <= o.returns.len())
                }
            };
            if !ok {
                return Err(missing(s.to_string()));
            }
        }
    }
    Ok(())
}

/// Result of one generated transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub instance: TransactionInstance,
    pub committed: bool,
    pub abort_reason: Option<String>,
    pub service_ms: f64,
}

/// Per-parameter value sources keyed by template and parameter.
pub type SourceMap = HashMap<ParamKey, Arc<ParamSource>>;

pub struct Generator {
    templates: Vec<TransactionTemplate>,
    by_name: HashMap<String, usize>,
    logic: HashMap<String, TransactionLogic>,
    sources: SourceMap,
    fallback: HashMap<ParamKey, Arc<ParamSource>>,
    schedule: MixSchedule,
    cfg: GeneratorConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationReport {
    pub transactions: u64,
    pub committed: u64,
    pub aborted: u64,
    pub operations: u64,
    pub per_template: BTreeMap<String, u64>,
    /// Times a parameter fell through to its value source.
    pub sampler_calls: BTreeMap<ParamKey, u64>,
    /// Transactions started per window.
    pub per_window: Vec<u64>,
}

impl GenerationReport {
    fn merge(&mut self, o: GenerationReport) {
        self.transactions += o.transactions;
        self.committed += o.committed;
        self.aborted += o.aborted;
        self.operations += o.operations;
        for (k, v) in o.per_template {
            *self.per_template.entry(k).or_default() += v;
        }
        for (k, v) in o.sampler_calls {
            *self.sampler_calls.entry(k).or_default() += v;
        }
        if self.per_window.len() < o.per_window.len() {
            self.per_window.resize(o.per_window.len(), 0);
        }
        for (a, b) in self.per_window.iter_mut().zip(o.per_window) {
            *a += b;
        }
    }
}

impl Generator {
    /// Parameters without an entry in `sources` draw uniformly from a
    /// default space of their declared type.
    pub fn new(
        templates: Vec<TransactionTemplate>,
        logic: Vec<TransactionLogic>,
        schedule: MixSchedule,
        sources: SourceMap,
        cfg: GeneratorConfig,
    ) -> Result<Self, WorkloadError> {
        cfg.validate()?;
        if schedule.is_empty() {
            return Err(WorkloadError::EmptySchedule);
        }
        let by_name: HashMap<String, usize> = templates
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        for t in schedule.templates() {
            if !by_name.contains_key(t) {
                return Err(WorkloadError::UnknownTemplate(t.to_string()));
            }
        }
        let mut logic_map = HashMap::new();
        for l in logic {
            let tpl = by_name
                .get(&l.template)
                .map(|&i| &templates[i])
                .ok_or_else(|| WorkloadError::UnknownTemplate(l.template.clone()))?;
            validate_logic(tpl, &l)?;
            logic_map.insert(l.template.clone(), l);
        }
        let mut fallback = HashMap::new();
        for tpl in &templates {
            for op in tpl.ops() {
                for (j, slot) in op.params.iter().enumerate() {
                    let key = ParamKey::new(&tpl.name, op.index, j + 1);
                    if !sources.contains_key(&key) {
                        let space = default_space(slot, seed::derive_str(cfg.seed, &tpl.name));
                        fallback.insert(key, Arc::new(ParamSource::Space(Arc::new(space))));
                    }
                }
            }
        }
        Ok(Generator {
            templates,
            by_name,
            logic: logic_map,
            sources,
            fallback,
            schedule,
            cfg,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &MixSchedule {
        &self.schedule
    }

    pub fn template(&self, name: &str) -> Option<&TransactionTemplate> {
        self.by_name.get(name).map(|&i| &self.templates[i])
    }

    fn source(&self, key: &ParamKey) -> &ParamSource {
        self.sources
            .get(key)
            .or_else(|| self.fallback.get(key))
            .expect("every parameter has a source")
    }

    /// Runs one transaction of `name` starting at `elapsed_ms`.
    pub fn execute_transaction<R: Rng + ?Sized>(
        &self,
        name: &str,
        worker: u32,
        elapsed_ms: u64,
        target: &mut dyn ExecutionTarget,
        rng: &mut R,
        sampled: &mut dyn FnMut(ParamKey),
    ) -> Result<Outcome, WorkloadError> {
        let tpl = self
            .template(name)
            .ok_or_else(|| WorkloadError::UnknownTemplate(name.to_string()))?;
        let logic = self.logic.get(name);
        let mut ctx = InstanceContext::new();
        let mut records: Vec<OpRecord> = Vec::new();
        let mut failure = target.begin(worker).err();
        let (mut nb, mut nl) = (0, 0);
        for node in &tpl.body {
            if failure.is_some() {
                break;
            }
            let mut run_op = |op: &SqlOp,
                              run: u32,
                              ctx: &mut InstanceContext,
                              rng: &mut R|
             -> Result<(), TargetError> {
                let mut params = Vec::with_capacity(op.params.len());
                for j in 1..=op.params.len() {
                    let p = op.param_ref(j);
                    let key = ParamKey {
                        template: tpl.name.clone(),
                        param: p,
                    };
                    let source = self.source(&key);
                    let mut draw = |r: &mut R| source.sample(elapsed_ms, r);
                    let (v, how) = instantiate_param(
                        p,
                        logic.and_then(|l| l.param(p)),
                        ctx,
                        run,
                        rng,
                        &mut draw,
                    );
                    if how == Instantiation::Sampled {
                        sampled(key);
                    }
                    ctx.set_param(p, v.clone());
                    params.push(v);
                }
                let rows = target.submit(op, &params)?;
                ctx.set_rows(op.index, rows.clone());
                records.push(OpRecord {
                    op: op.index,
                    ordinal: run,
                    params,
                    rows,
                });
                Ok(())
            };
            let result = match node {
                TemplateNode::Op(op) => run_op(op, 1, &mut ctx, rng),
                TemplateNode::Branch(alts) => {
                    let probs = logic
                        .and_then(|l| l.structure.branches.get(nb))
                        .filter(|p| p.len() == alts.len());
                    nb += 1;
                    let alt = match probs {
                        Some(p) => pick_index(p, rng),
                        None => rng.random_range(0..alts.len()),
                    };
                    alts[alt]
                        .iter()
                        .try_for_each(|op| run_op(op, 1, &mut ctx, rng))
                }
                TemplateNode::Loop(body) => {
                    let avg = logic
                        .and_then(|l| l.structure.loops.get(nl))
                        .copied()
                        .unwrap_or(1.0);
                    nl += 1;
                    let runs = loop_count(avg, rng);
                    (1..=runs).try_for_each(|run| {
                        body.iter()
                            .try_for_each(|op| run_op(op, run, &mut ctx, rng))
                    })
                }
            };
            failure = result.err();
        }
        let failure = match failure {
            None => target.commit().err(),
            Some(e) => {
                target.abort();
                Some(e)
            }
        };
        let service_ms = records.len() as f64 * self.cfg.op_cost_ms;
        Ok(Outcome {
            instance: TransactionInstance {
                template: tpl.name.clone(),
                timestamp: elapsed_ms,
                worker: Some(worker),
                ops: records,
            },
            committed: failure.is_none(),
            abort_reason: failure.map(|e| e.to_string()),
            service_ms,
        })
    }

    /// Runs one worker until the configured duration; `sink` receives
    /// every transaction in time order.
    pub fn run_worker(
        &self,
        worker: u32,
        target: &mut dyn ExecutionTarget,
        sink: &mut dyn FnMut(Outcome),
    ) -> Result<GenerationReport, WorkloadError> {
        let cfg = &self.cfg;
        let mut rng = seed::rng(seed::derive(cfg.seed, &[worker as u64]));
        let window_ms = self.schedule.window_ms.max(1);
        let mut report = GenerationReport::default();
        let slot = (worker - cfg.first_worker) as f64;
        let mut clock = match target_tps(cfg.model, &self.schedule, 0) {
            Some(tps) if tps > 0.0 => slot * 1000.0 / tps,
            _ => 0.0,
        };
        while clock < cfg.duration_ms as f64 {
            let now = clock as u64;
            let window = now / window_ms;
            if target_tps(cfg.model, &self.schedule, window).is_some_and(|t| t <= 0.0) {
                clock = ((window + 1) * window_ms) as f64;
                continue;
            }
            let name = self.schedule.pick(window, &mut rng).to_string();
            let mut sampled = |k: ParamKey| *report.sampler_calls.entry(k).or_default() += 1;
            let out =
                self.execute_transaction(&name, worker, now, target, &mut rng, &mut sampled)?;
            report.transactions += 1;
            report.operations += out.instance.ops.len() as u64;
            if out.committed {
                report.committed += 1;
            } else {
                report.aborted += 1;
            }
            *report.per_template.entry(name).or_default() += 1;
            if report.per_window.len() <= window as usize {
                report.per_window.resize(window as usize + 1, 0);
            }
            report.per_window[window as usize] += 1;
            let think = think_time_ms(
                cfg.model,
                &self.schedule,
                window,
                cfg.workers,
                out.service_ms,
            );
            clock += out.service_ms + think;
            if out.service_ms + think <= 0.0 {
                // a transaction without operations still takes a tick
                clock += 1.0;
            }
            sink(out);
        }
        Ok(report)
    }

    /// Runs all workers, each with its own target, and passes transactions
    /// to `sink` ordered by timestamp then worker.
    pub fn run<F>(
        &self,
        make_target: F,
        sink: &mut dyn FnMut(Outcome),
    ) -> Result<GenerationReport, WorkloadError>
    where
        F: Fn(u32) -> Box<dyn ExecutionTarget + Send> + Sync,
    {
        let first = self.cfg.first_worker;
        if self.cfg.workers == 1 {
            return self.run_worker(first, make_target(first).as_mut(), sink);
        }
        let results: Vec<Result<(GenerationReport, Vec<Outcome>), WorkloadError>> = (first
            ..first + self.cfg.workers)
            .into_par_iter()
            .map(|w| {
                let mut target = make_target(w);
                let mut out = Vec::new();
                let rep = self.run_worker(w, target.as_mut(), &mut |o| out.push(o))?;
                Ok((rep, out))
            })
            .collect();
        let mut report = GenerationReport::default();
        let mut streams = Vec::new();
        for r in results {
            let (rep, out) = r?;
            report.merge(rep);
            streams.push(out.into_iter().peekable());
        }
        loop {
            let next = streams
                .iter_mut()
                .enumerate()
                .filter_map(|(i, s)| s.peek().map(|o| (o.instance.timestamp, i)))
                .min();
            let Some((_, i)) = next else { break };
            sink(streams[i].next().expect("peeked"));
        }
        Ok(report)
    }
}

fn pick_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `floor(avg)` runs plus one more with probability `frac(avg)`.
pub fn loop_count<R: Rng + ?Sized>(avg: f64, rng: &mut R) -> u32 {
    let avg = avg.max(0.0);
    let base = avg.floor();
    base as u32 + u32::from(rng.random::<f64>() < avg - base)
}

/// Uniform space for a parameter nothing else describes.
pub fn default_space(slot: &ParamSlot, seed: u64) -> ValueSpace {
    match slot.data_type {
        DataType::Varchar => {
            let name = slot
                .column
                .as_ref()
                .map_or("_".to_string(), |c| c.to_string());
            ValueSpace::Column(ColumnGenerator::string(
                seed_strings(seed, &name, 4, 12, 1000),
                1000,
            ))
        }
        dt => ValueSpace::Column(ColumnGenerator::numeric(1.0, 1000.0, 1000, dt)),
    }
}

/// Synthetic value space of a bound parameter: key columns map onto their
/// synthetic key domain, other columns onto their column generator.
pub fn param_space(
    slot: &ParamSlot,
    db: &SyntheticDatabase,
    stats: &[TableCharacteristics],
) -> Option<ValueSpace> {
    let col = slot.column.as_ref()?;
    let plan = db.table(&col.table)?;
    if let Some(d) = plan.key_domain(&col.column) {
        let (real_lo, real_hi) = stats
            .iter()
            .find(|t| t.table == col.table)
            .and_then(|t| t.column(&col.column))
            .and_then(|c| c.numeric_domain())
            .unwrap_or((d.lo as f64, d.hi as f64));
        return Some(ValueSpace::Key {
            real_lo,
            real_hi,
            syn_lo: d.lo,
            syn_hi: d.hi,
        });
    }
    plan.generator(&col.column).cloned().map(ValueSpace::Column)
}

/// Parameters the distribution file covers, each with its synthetic value
/// space, global distribution, windows and derived sampler seed.
fn covered_params<'d>(
    templates: &[TransactionTemplate],
    dist: &'d DistFile,
    db: &SyntheticDatabase,
    stats: &[TableCharacteristics],
    seed: u64,
) -> Vec<(ParamKey, ValueSpace, SDist, &'d [WindowStats], u64)> {
    let mut out = Vec::new();
    for tpl in templates {
        for op in tpl.ops() {
            for (j, slot) in op.params.iter().enumerate() {
                let key = ParamKey::new(&tpl.name, op.index, j + 1);
                let windows = dist.windows.get(&key).map(Vec::as_slice).unwrap_or(&[]);
                let global = dist.global.get(&key);
                if global.is_none() && windows.is_empty() {
                    continue;
                }
                let space =
                    param_space(slot, db, stats).unwrap_or_else(|| default_space(slot, seed));
                let global = global
                    .cloned()
                    .unwrap_or_else(|| SDist::empty(dist.config.i));
                let key_seed =
                    seed::derive_str(seed::derive_str(seed, &tpl.name), &key.param.to_string());
                out.push((key, space, global, windows, key_seed));
            }
        }
    }
    out
}

/// Builds a value source for every parameter the distribution file covers.
/// `spool` supplies pregenerated candidate pools for C mode.
pub fn build_sources(
    templates: &[TransactionTemplate],
    dist: &DistFile,
    db: &SyntheticDatabase,
    stats: &[TableCharacteristics],
    opts: &SamplerOptions,
    spool: Option<&BTreeMap<ParamKey, Vec<CandidateWindow>>>,
) -> SourceMap {
    covered_params(templates, dist, db, stats, opts.seed)
        .into_iter()
        .map(|(key, space, global, windows, key_seed)| {
            let o = SamplerOptions {
                seed: key_seed,
                ..opts.clone()
            };
            let cands = spool.and_then(|s| s.get(&key)).cloned();
            let sampler = ParamSampler::build(&global, windows, space, &o, cands);
            (key, Arc::new(ParamSource::Dist(Box::new(sampler))))
        })
        .collect()
}

/// Candidate pools of every window of every covered parameter, as
/// [`build_sources`] would generate them for C mode with the same `seed`.
pub fn build_candidate_spool(
    templates: &[TransactionTemplate],
    dist: &DistFile,
    db: &SyntheticDatabase,
    stats: &[TableCharacteristics],
    h: usize,
    seed: u64,
) -> BTreeMap<ParamKey, Vec<CandidateWindow>> {
    covered_params(templates, dist, db, stats, seed)
        .into_par_iter()
        .map(|(key, space, _, windows, key_seed)| {
            (key, candidate_series(windows, &space, h, key_seed))
        })
        .collect()
}

//! Discrete-event conflict simulator.
//!
//! Replays an operation stream against record-level strict two-phase
//! locking with wait-for-graph deadlock detection, hash partitioning on the
//! first primary-key column and an LRU buffer pool. Every operation costs a
//! fixed service time; everything else is lock waiting.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::num::NonZeroUsize;

use lru::LruCache;
use thiserror::Error;

use crate::model::{FilterKind, LightTraceRecord, OpKind, Schema, TransactionTemplate, Value};
use crate::seed::fnv1a;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("operation {op} of {template} has no bound key parameter")]
    UnresolvedKey { template: String, op: usize },
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("empty operation stream")]
    EmptyStream,
    #[error("metrics line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub partitions: usize,
    /// Buffer capacity in records.
    pub buffer_capacity: usize,
    /// Service time per operation in microseconds.
    pub op_cost_us: u64,
    /// Workers used when records carry no worker id (round-robin).
    pub workers: u32,
    pub record_history: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            partitions: 5,
            buffer_capacity: 10_000,
            op_cost_us: 500,
            workers: 1,
            record_history: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.partitions == 0 {
            return Err(SimError::BadConfig("partitions must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(SimError::BadConfig("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// A lockable record: table, the bound columns and their values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub table: u32,
    pub columns: u32,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyedOp {
    pub key: RecordKey,
    pub write: bool,
    pub partition: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTx {
    pub worker: u32,
    pub arrival_us: u64,
    pub ops: Vec<KeyedOp>,
}

impl SimTx {
    /// Touches keys in at least two partitions.
    pub fn is_distributed(&self) -> bool {
        self.ops
            .first()
            .is_some_and(|f| self.ops.iter().any(|o| o.partition != f.partition))
    }
}

/// Partition of a first-key-column value.
pub fn partition_of(v: &Value, partitions: usize) -> usize {
    let p = partitions.max(1);
    match v {
        Value::Int(x) => x.rem_euclid(p as i64) as usize,
        Value::Dec(x) => (fnv1a(&x.to_bits().to_le_bytes()) % p as u64) as usize,
        Value::Str(s) => (fnv1a(s.as_bytes()) % p as u64) as usize,
    }
}

#[derive(Debug, Clone)]
struct OpBinding {
    table: u32,
    columns: u32,
    /// 0-based parameter positions forming the key.
    positions: Vec<usize>,
    /// Position holding the first primary-key column, if bound.
    partition_pos: Option<usize>,
    write: bool,
}

/// Turns operation records into lock keys using template bindings.
///
/// An operation covering the whole primary key locks that row; otherwise
/// it locks the predicate values of its pivotal parameters.
#[derive(Debug, Clone)]
pub struct KeyResolver {
    bindings: HashMap<String, BTreeMap<usize, OpBinding>>,
}

impl KeyResolver {
    pub fn new(templates: &[TransactionTemplate], schema: &Schema) -> Result<Self, SimError> {
        let table_ids: HashMap<&str, u32> = schema
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.as_str(), i as u32))
            .collect();
        let mut bindings = HashMap::new();
        for tpl in templates {
            let mut per_op = BTreeMap::new();
            for op in tpl.ops() {
                let unresolved = || SimError::UnresolvedKey {
                    template: tpl.name.clone(),
                    op: op.index,
                };
                let tname = op.table().ok_or_else(unresolved)?;
                let table = schema.table(tname).ok_or_else(unresolved)?;
                let bound = |col: &str| {
                    op.params.iter().position(|p| {
                        (p.pivotal || op.kind == OpKind::Insert)
                            && p.column
                                .as_ref()
                                .is_some_and(|c| c.table == tname && c.column == col)
                    })
                };
                let pk: Option<Vec<usize>> = table.primary_key.iter().map(|c| bound(c)).collect();
                let partition_pos = table.primary_key.first().and_then(|c| bound(c));
                let (positions, columns) = match pk {
                    Some(pk)
                        if op.filter == FilterKind::PrimaryKey || op.kind == OpKind::Insert =>
                    {
                        (pk, 0)
                    }
                    _ => {
                        let pos: Vec<usize> = op
                            .params
                            .iter()
                            .enumerate()
                            .filter(|(_, p)| {
                                p.pivotal && p.column.as_ref().is_some_and(|c| c.table == tname)
                            })
                            .map(|(i, _)| i)
                            .collect();
                        let sig = pos.iter().fold(1u32, |acc, &i| {
                            let col = &op.params[i].column.as_ref().expect("filtered").column;
                            acc.wrapping_mul(31)
                                .wrapping_add(fnv1a(col.as_bytes()) as u32)
                        });
                        (pos, sig | 1)
                    }
                };
                if positions.is_empty() {
                    return Err(unresolved());
                }
                let write = op.kind.is_write();
                per_op.insert(
                    op.index,
                    OpBinding {
                        table: table_ids[tname],
                        columns,
                        positions,
                        partition_pos,
                        write,
                    },
                );
            }
            bindings.insert(tpl.name.clone(), per_op);
        }
        Ok(KeyResolver { bindings })
    }

    pub fn resolve(
        &self,
        rec: &LightTraceRecord,
        partitions: usize,
    ) -> Result<Vec<KeyedOp>, SimError> {
        let per_op = self
            .bindings
            .get(&rec.template)
            .ok_or_else(|| SimError::UnknownTemplate(rec.template.clone()))?;
        rec.ops
            .iter()
            .map(|op| {
                let unresolved = || SimError::UnresolvedKey {
                    template: rec.template.clone(),
                    op: op.op,
                };
                let b = per_op.get(&op.op).ok_or_else(unresolved)?;
                let values = b
                    .positions
                    .iter()
                    .map(|&i| op.params.get(i).cloned().flatten())
                    .collect::<Option<Vec<Value>>>()
                    .ok_or_else(unresolved)?;
                let first = b
                    .partition_pos
                    .and_then(|i| op.params.get(i).cloned().flatten())
                    .unwrap_or_else(|| values[0].clone());
                Ok(KeyedOp {
                    key: RecordKey {
                        table: b.table,
                        columns: b.columns,
                        values,
                    },
                    write: b.write,
                    partition: partition_of(&first, partitions),
                })
            })
            .collect()
    }
}

/// Builds simulator transactions from trace records. Records without a
/// worker id are dealt round-robin over `cfg.workers`.
pub fn prepare_stream<I>(
    records: I,
    resolver: &KeyResolver,
    cfg: &SimConfig,
) -> Result<Vec<SimTx>, SimError>
where
    I: IntoIterator<Item = LightTraceRecord>,
{
    records
        .into_iter()
        .enumerate()
        .map(|(n, rec)| {
            let ops = resolver.resolve(&rec, cfg.partitions)?;
            let worker = rec.worker.unwrap_or((n as u64 % cfg.workers as u64) as u32);
            Ok(SimTx {
                worker,
                arrival_us: rec.timestamp * 1000,
                ops,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimMetrics {
    pub transactions: u64,
    pub committed: u64,
    pub aborted: u64,
    pub elapsed_s: f64,
    pub throughput: f64,
    pub success_tps: f64,
    pub failure_tps: f64,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    /// Share of transaction time spent waiting for locks.
    pub lock_wait_share: f64,
    pub deadlocks: u64,
    pub deadlocks_per_s: f64,
    pub distributed_ratio: f64,
    pub buffer_misses: u64,
    pub buffer_hit_ratio: f64,
}

pub const METRICS_HEADER: &str = "# tracesynth-sim v1";

/// Metric names in report order; each maps to a field of [`SimMetrics`].
pub const METRIC_NAMES: [&str; 15] = [
    "transactions",
    "committed",
    "aborted",
    "elapsed_s",
    "throughput",
    "success_tps",
    "failure_tps",
    "mean_latency_ms",
    "p95_latency_ms",
    "lock_wait_share",
    "deadlocks",
    "deadlocks_per_s",
    "distributed_ratio",
    "buffer_misses",
    "buffer_hit_ratio",
];

impl SimMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "transactions" => self.transactions as f64,
            "committed" => self.committed as f64,
            "aborted" => self.aborted as f64,
            "elapsed_s" => self.elapsed_s,
            "throughput" => self.throughput,
            "success_tps" => self.success_tps,
            "failure_tps" => self.failure_tps,
            "mean_latency_ms" => self.mean_latency_ms,
            "p95_latency_ms" => self.p95_latency_ms,
            "lock_wait_share" => self.lock_wait_share,
            "deadlocks" => self.deadlocks as f64,
            "deadlocks_per_s" => self.deadlocks_per_s,
            "distributed_ratio" => self.distributed_ratio,
            "buffer_misses" => self.buffer_misses as f64,
            "buffer_hit_ratio" => self.buffer_hit_ratio,
            _ => return None,
        })
    }

    fn set(&mut self, name: &str, v: f64) -> bool {
        match name {
            "transactions" => self.transactions = v as u64,
            "committed" => self.committed = v as u64,
            "aborted" => self.aborted = v as u64,
            "elapsed_s" => self.elapsed_s = v,
            "throughput" => self.throughput = v,
            "success_tps" => self.success_tps = v,
            "failure_tps" => self.failure_tps = v,
            "mean_latency_ms" => self.mean_latency_ms = v,
            "p95_latency_ms" => self.p95_latency_ms = v,
            "lock_wait_share" => self.lock_wait_share = v,
            "deadlocks" => self.deadlocks = v as u64,
            "deadlocks_per_s" => self.deadlocks_per_s = v,
            "distributed_ratio" => self.distributed_ratio = v,
            "buffer_misses" => self.buffer_misses = v as u64,
            "buffer_hit_ratio" => self.buffer_hit_ratio = v,
            _ => return false,
        }
        true
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for name in METRIC_NAMES {
            writeln!(s, "{name}={}", self.get(name).expect("known metric")).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<SimMetrics, SimError> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l.trim()) != Some(METRICS_HEADER) {
            return Err(SimError::Parse {
                line: 1,
                msg: format!("expected header {METRICS_HEADER}"),
            });
        }
        let mut m = SimMetrics::default();
        let mut seen = HashSet::new();
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| SimError::Parse {
                line: no + 1,
                msg: msg.into(),
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected name=value"))?;
            let v: f64 = v.trim().parse().map_err(|_| err("bad number"))?;
            if !m.set(k.trim(), v) {
                return Err(err("unknown metric"));
            }
            seen.insert(k.trim().to_string());
        }
        if seen.len() != METRIC_NAMES.len() {
            return Err(SimError::Parse {
                line: 0,
                msg: "missing metrics".into(),
            });
        }
        Ok(m)
    }
}

/// One committed access, for serializability checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Access {
    pub tx: u64,
    pub key: RecordKey,
    pub write: bool,
    pub at_us: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOutcome {
    pub metrics: SimMetrics,
    /// Accesses of committed transactions in execution order.
    pub history: Vec<Access>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Shared,
    Exclusive,
}

#[derive(Default)]
struct LockEntry {
    holders: Vec<(u64, Mode)>,
    queue: VecDeque<(u64, Mode)>,
}

impl LockEntry {
    fn compatible(&self, tx: u64, mode: Mode) -> bool {
        self.holders
            .iter()
            .all(|&(h, m)| h == tx || (m == Mode::Shared && mode == Mode::Shared))
    }

    fn holds(&self, tx: u64, mode: Mode) -> bool {
        self.holders
            .iter()
            .any(|&(h, m)| h == tx && (m == Mode::Exclusive || mode == Mode::Shared))
    }

    fn grant(&mut self, tx: u64, mode: Mode) {
        if let Some(h) = self.holders.iter_mut().find(|h| h.0 == tx) {
            if mode == Mode::Exclusive {
                h.1 = Mode::Exclusive;
            }
        } else {
            self.holders.push((tx, mode));
        }
    }
}

struct Buffer {
    cache: Option<LruCache<RecordKey, ()>>,
    misses: u64,
    hits: u64,
}

impl Buffer {
    fn new(capacity: usize) -> Self {
        Buffer {
            cache: NonZeroUsize::new(capacity).map(LruCache::new),
            misses: 0,
            hits: 0,
        }
    }

    fn access(&mut self, key: &RecordKey) {
        let Some(c) = self.cache.as_mut() else {
            self.misses += 1;
            return;
        };
        if c.get(key).is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
            c.put(key.clone(), ());
        }
    }
}

struct Running {
    tx: u64,
    idx: usize,
    start_us: u64,
    next_op: usize,
    wait_since: Option<(u64, RecordKey, Mode)>,
    held: Vec<RecordKey>,
    accesses: Vec<Access>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    txs: &'a [SimTx],
    queues: BTreeMap<u32, VecDeque<usize>>,
    running: BTreeMap<u32, Running>,
    tx_worker: HashMap<u64, u32>,
    locks: HashMap<RecordKey, LockEntry>,
    events: BinaryHeap<Reverse<(u64, u64, u32)>>,
    seq: u64,
    next_tx: u64,
    buffer: Buffer,
    latencies_us: Vec<u64>,
    total_time_us: u64,
    wait_us: u64,
    committed: u64,
    aborted: u64,
    deadlocks: u64,
    first_us: u64,
    last_us: u64,
    history: Vec<Access>,
}

/// Runs the stream to completion and measures it.
pub fn simulate(txs: &[SimTx], cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    if txs.is_empty() {
        return Err(SimError::EmptyStream);
    }
    let mut queues: BTreeMap<u32, VecDeque<usize>> = BTreeMap::new();
    let mut order: Vec<usize> = (0..txs.len()).collect();
    order.sort_by_key(|&i| (txs[i].arrival_us, i));
    for i in order {
        queues.entry(txs[i].worker).or_default().push_back(i);
    }
    let mut e = Engine {
        cfg,
        txs,
        queues,
        running: BTreeMap::new(),
        tx_worker: HashMap::new(),
        locks: HashMap::new(),
        events: BinaryHeap::new(),
        seq: 0,
        next_tx: 0,
        buffer: Buffer::new(cfg.buffer_capacity),
        latencies_us: Vec::new(),
        total_time_us: 0,
        wait_us: 0,
        committed: 0,
        aborted: 0,
        deadlocks: 0,
        first_us: txs.iter().map(|t| t.arrival_us).min().unwrap_or(0),
        last_us: 0,
        history: Vec::new(),
    };
    let workers: Vec<u32> = e.queues.keys().copied().collect();
    for w in workers {
        let at = e.txs[e.queues[&w][0]].arrival_us;
        e.schedule(at, w);
    }
    while let Some(Reverse((now, _, w))) = e.events.pop() {
        e.step(now, w);
    }
    Ok(e.finish())
}

impl Engine<'_> {
    fn schedule(&mut self, at: u64, worker: u32) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, worker)));
    }

    fn step(&mut self, now: u64, w: u32) {
        if !self.running.contains_key(&w) {
            let Some(idx) = self.queues.get_mut(&w).and_then(|q| q.pop_front()) else {
                return;
            };
            let arrival = self.txs[idx].arrival_us;
            if arrival > now {
                self.queues
                    .get_mut(&w)
                    .expect("worker queue")
                    .push_front(idx);
                self.schedule(arrival, w);
                return;
            }
            let tx = self.next_tx;
            self.next_tx += 1;
            self.tx_worker.insert(tx, w);
            self.running.insert(
                w,
                Running {
                    tx,
                    idx,
                    start_us: now,
                    next_op: 0,
                    wait_since: None,
                    held: Vec::new(),
                    accesses: Vec::new(),
                },
            );
        }
        let r = self.running.get(&w).expect("running");
        if r.wait_since.is_some() {
            return;
        }
        let ops = &self.txs[r.idx].ops;
        if r.next_op == ops.len() {
            self.end(now, w, true);
            self.schedule(now, w);
            return;
        }
        let op = &ops[r.next_op];
        let mode = if op.write {
            Mode::Exclusive
        } else {
            Mode::Shared
        };
        let tx = r.tx;
        let key = op.key.clone();
        let entry = self.locks.entry(key.clone()).or_default();
        let granted =
            entry.holds(tx, mode) || (entry.queue.is_empty() && entry.compatible(tx, mode));
        if granted {
            entry.grant(tx, mode);
            self.perform(now, w, key, op.write);
        } else {
            entry.queue.push_back((tx, mode));
            self.running.get_mut(&w).expect("running").wait_since = Some((now, key, mode));
            // one abort can leave another cycle through the same waiter
            while let Some(victim) = self.find_deadlock(tx) {
                self.deadlocks += 1;
                let vw = self.tx_worker[&victim];
                self.end(now, vw, false);
                self.schedule(now, vw);
                if victim == tx {
                    break;
                }
            }
        }
    }

    fn perform(&mut self, now: u64, w: u32, key: RecordKey, write: bool) {
        self.buffer.access(&key);
        let r = self.running.get_mut(&w).expect("running");
        if !r.held.contains(&key) {
            r.held.push(key.clone());
        }
        if self.cfg.record_history {
            r.accesses.push(Access {
                tx: r.tx,
                key,
                write,
                at_us: now,
            });
        }
        r.next_op += 1;
        self.schedule(now + self.cfg.op_cost_us, w);
    }

    /// Transactions `tx` waits for: incompatible holders and earlier
    /// incompatible waiters of the key it is queued on.
    fn waits_for(&self, tx: u64) -> Vec<u64> {
        let w = self.tx_worker[&tx];
        let Some(Running {
            wait_since: Some((_, key, mode)),
            ..
        }) = self.running.get(&w)
        else {
            return Vec::new();
        };
        let entry = &self.locks[key];
        let mut out: Vec<u64> = entry
            .holders
            .iter()
            .filter(|&&(h, m)| h != tx && (m == Mode::Exclusive || *mode == Mode::Exclusive))
            .map(|h| h.0)
            .collect();
        for &(q, m) in &entry.queue {
            if q == tx {
                break;
            }
            if m == Mode::Exclusive || *mode == Mode::Exclusive {
                out.push(q);
            }
        }
        out
    }

    /// Cycle through `start` in the wait-for graph; returns the youngest
    /// transaction on it.
    fn find_deadlock(&self, start: u64) -> Option<u64> {
        let mut path = vec![start];
        let mut iters = vec![self.waits_for(start).into_iter()];
        let mut visited = HashSet::from([start]);
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(n) if n == start => {
                    // transaction ids grow with start time
                    return path.iter().copied().max();
                }
                Some(n) if visited.insert(n) => {
                    path.push(n);
                    iters.push(self.waits_for(n).into_iter());
                }
                Some(_) => {}
                None => {
                    iters.pop();
                    path.pop();
                }
            }
        }
        None
    }

    /// Commits or aborts the worker's transaction and wakes waiters.
    fn end(&mut self, now: u64, w: u32, commit: bool) {
        let r = self.running.remove(&w).expect("running");
        if let Some((since, key, _)) = &r.wait_since {
            self.wait_us += now - since;
            if let Some(e) = self.locks.get_mut(key) {
                e.queue.retain(|q| q.0 != r.tx);
            }
        }
        let mut touched = r.held.clone();
        for key in &r.held {
            if let Some(e) = self.locks.get_mut(key) {
                e.holders.retain(|h| h.0 != r.tx);
            }
        }
        if let Some((_, key, _)) = r.wait_since {
            touched.push(key);
        }
        let latency = now - r.start_us;
        self.total_time_us += latency;
        self.last_us = self.last_us.max(now);
        if commit {
            self.committed += 1;
            self.latencies_us.push(latency);
            self.history.extend(r.accesses);
        } else {
            self.aborted += 1;
        }
        self.tx_worker.remove(&r.tx);
        for key in touched {
            self.wake(now, &key);
        }
    }

    fn wake(&mut self, now: u64, key: &RecordKey) {
        loop {
            let Some(entry) = self.locks.get_mut(key) else {
                return;
            };
            let Some(&(tx, mode)) = entry.queue.front() else {
                if entry.holders.is_empty() {
                    self.locks.remove(key);
                }
                return;
            };
            if !entry.compatible(tx, mode) {
                return;
            }
            entry.queue.pop_front();
            entry.grant(tx, mode);
            let w = self.tx_worker[&tx];
            let r = self.running.get_mut(&w).expect("waiting transaction");
            let (since, _, _) = r.wait_since.take().expect("was waiting");
            self.wait_us += now - since;
            let write = mode == Mode::Exclusive;
            self.perform(now, w, key.clone(), write);
        }
    }

    fn finish(mut self) -> SimOutcome {
        let n = self.committed + self.aborted;
        let elapsed_s = (self.last_us.saturating_sub(self.first_us)).max(1) as f64 / 1e6;
        self.latencies_us.sort_unstable();
        let mean = if self.latencies_us.is_empty() {
            0.0
        } else {
            self.latencies_us.iter().sum::<u64>() as f64 / self.latencies_us.len() as f64 / 1000.0
        };
        let p95 = self
            .latencies_us
            .get(((self.latencies_us.len() as f64 * 0.95).ceil() as usize).saturating_sub(1))
            .map_or(0.0, |v| *v as f64 / 1000.0);
        let distributed = self.txs.iter().filter(|t| t.is_distributed()).count();
        let accesses = self.buffer.hits + self.buffer.misses;
        let metrics = SimMetrics {
            transactions: n,
            committed: self.committed,
            aborted: self.aborted,
            elapsed_s,
            throughput: n as f64 / elapsed_s,
            success_tps: self.committed as f64 / elapsed_s,
            failure_tps: self.aborted as f64 / elapsed_s,
            mean_latency_ms: mean,
            p95_latency_ms: p95,
            lock_wait_share: if self.total_time_us == 0 {
                0.0
            } else {
                self.wait_us as f64 / self.total_time_us as f64
            },
            deadlocks: self.deadlocks,
            deadlocks_per_s: self.deadlocks as f64 / elapsed_s,
            distributed_ratio: distributed as f64 / self.txs.len() as f64,
            buffer_misses: self.buffer.misses,
            buffer_hit_ratio: if accesses == 0 {
                0.0
            } else {
                self.buffer.hits as f64 / accesses as f64
            },
        };
        let mut history = std::mem::take(&mut self.history);
        history.sort_by_key(|a| (a.at_us, a.tx));
        SimOutcome { metrics, history }
    }
}

/// True if the conflict graph of a committed history has no cycle.
pub fn conflict_serializable(history: &[Access]) -> bool {
    let mut edges: BTreeMap<u64, HashSet<u64>> = BTreeMap::new();
    let mut by_key: HashMap<&RecordKey, Vec<&Access>> = HashMap::new();
    for a in history {
        by_key.entry(&a.key).or_default().push(a);
    }
    for accs in by_key.values() {
        for (i, a) in accs.iter().enumerate() {
            for b in &accs[i + 1..] {
                if a.tx != b.tx && (a.write || b.write) {
                    let (from, to) = if (a.at_us, a.tx) <= (b.at_us, b.tx) {
                        (a.tx, b.tx)
                    } else {
                        (b.tx, a.tx)
                    };
                    edges.entry(from).or_default().insert(to);
                }
            }
        }
    }
    // Kahn's algorithm
    let mut indeg: BTreeMap<u64, usize> = BTreeMap::new();
    for (from, tos) in &edges {
        indeg.entry(*from).or_default();
        for t in tos {
            *indeg.entry(*t).or_default() += 1;
        }
    }
    let mut ready: Vec<u64> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(t, _)| *t)
        .collect();
    let mut seen = 0;
    while let Some(t) = ready.pop() {
        seen += 1;
        for to in edges.get(&t).into_iter().flatten() {
            let d = indeg.get_mut(to).expect("node");
            *d -= 1;
            if *d == 0 {
                ready.push(*to);
            }
        }
    }
    seen == indeg.len()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub metric: &'static str,
    pub real: f64,
    pub synth: f64,
    /// `(synth - real) / real`; zero when both are zero.
    pub relative: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub threshold: f64,
    pub rows: Vec<Deviation>,
}

/// Metrics compared between runs; raw counts depend on run length and are
/// left out.
pub const COMPARED_METRICS: [&str; 9] = [
    "throughput",
    "success_tps",
    "failure_tps",
    "mean_latency_ms",
    "p95_latency_ms",
    "lock_wait_share",
    "deadlocks_per_s",
    "distributed_ratio",
    "buffer_hit_ratio",
];

impl DeviationReport {
    pub fn flagged(&self) -> impl Iterator<Item = &Deviation> {
        self.rows.iter().filter(|d| d.flagged)
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .map(|d| d.relative.abs())
            .fold(0.0, f64::max)
    }

    pub fn row(&self, metric: &str) -> Option<&Deviation> {
        self.rows.iter().find(|d| d.metric == metric)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>14} {:>14} {:>10}  flag\n",
            "metric", "real", "synth", "dev"
        );
        for d in &self.rows {
            let flag = if d.flagged { "!" } else { "" };
            writeln!(
                s,
                "{:<18} {:>14.4} {:>14.4} {:>9.2}%  {flag}",
                d.metric,
                d.real,
                d.synth,
                d.relative * 100.0
            )
            .unwrap();
        }
        s
    }

    /// Machine-readable block: one `dev.<metric>=<value>` line per metric.
    pub fn to_stats(&self) -> String {
        let mut s = format!("# tracesynth-report v1\nthreshold={}\n", self.threshold);
        for d in &self.rows {
            writeln!(s, "dev.{}={} flagged={}", d.metric, d.relative, d.flagged).unwrap();
        }
        s
    }
}

/// Signed relative deviation of each compared metric.
pub fn compare(
    real: &SimMetrics,
    synth: &SimMetrics,
    threshold: f64,
) -> Result<DeviationReport, SimError> {
    if synth.transactions == 0 || real.transactions == 0 {
        return Err(SimError::EmptyStream);
    }
    let rows = COMPARED_METRICS
        .iter()
        .map(|&m| {
            let (r, s) = (real.get(m).expect("known"), synth.get(m).expect("known"));
            let relative = if r == s {
                0.0
            } else if r == 0.0 {
                f64::INFINITY.copysign(s)
            } else {
                (s - r) / r
            };
            Deviation {
                metric: m,
                real: r,
                synth: s,
                relative,
                flagged: relative.abs() > threshold,
            }
        })
        .collect();
    Ok(DeviationReport { threshold, rows })
}

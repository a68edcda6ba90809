//! Transaction logic: branch and loop statistics plus parameter dependencies
//! mined from heavy traces.
//!
//! Each parameter gets at most one between dependency (PD1), otherwise a list
//! of equal / inclusive / linear dependencies on earlier items (PD2) and, for
//! loop operations, a linear relation between successive runs (PD3).

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    parse_item_ref, FilterKind, ParamRef, ReturnRef, TemplateNode, TransactionInstance,
    TransactionTemplate, Value,
};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum LogicError {
    #[error("no instances of template {0}")]
    EmptyTrace(String),
    #[error("instance of template {found} passed to extraction for {expected}")]
    TemplateMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("logic file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    /// Instances used for statistics.
    pub k: usize,
    /// Instance pairs used to fit linear coefficients.
    pub n: usize,
    pub max_deps: usize,
    /// Dependencies below this probability are treated as noise.
    pub min_pr: f64,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            k: 10_000,
            n: 10_000,
            max_deps: 10,
            min_pr: 0.01,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    fn check(&self) -> Result<(), LogicError> {
        if self.k < 2 {
            return Err(LogicError::BadConfig("K must be at least 2".into()));
        }
        if self.n < 1 {
            return Err(LogicError::BadConfig("N must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_pr) {
            return Err(LogicError::BadConfig("minPr must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DepSource {
    Param(ParamRef),
    Return(ReturnRef),
}

impl DepSource {
    /// Operation the source belongs to.
    pub fn op(&self) -> usize {
        match self {
            DepSource::Param(p) => p.op,
            DepSource::Return(r) => r.op,
        }
    }
}

impl fmt::Display for DepSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepSource::Param(p) => p.fmt(f),
            DepSource::Return(r) => r.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepKind {
    Equal,
    Inclusive,
    Linear { a: f64, b: f64 },
}

impl DepKind {
    pub fn tag(&self) -> &'static str {
        match self {
            DepKind::Equal => "ER",
            DepKind::Inclusive => "IR",
            DepKind::Linear { .. } => "LR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepItem {
    pub source: DepSource,
    pub kind: DepKind,
    pub pr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetweenDep {
    pub lower: ParamRef,
    pub delta: f64,
}

/// `x_t = a * x_{t-1} + b` with probability `pr` across successive loop runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopDep {
    pub pr: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLogic {
    pub between: Option<BetweenDep>,
    pub deps: Vec<DepItem>,
    pub loop_deps: Vec<LoopDep>,
}

impl ParamLogic {
    pub fn is_empty(&self) -> bool {
        self.between.is_none() && self.deps.is_empty() && self.loop_deps.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureInfo {
    /// Per branch node, the probability of each alternative.
    pub branches: Vec<Vec<f64>>,
    /// Per loop node, the mean number of runs per instance.
    pub loops: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionLogic {
    pub template: String,
    pub structure: StructureInfo,
    pub params: BTreeMap<ParamRef, ParamLogic>,
}

impl TransactionLogic {
    pub fn param(&self, p: ParamRef) -> Option<&ParamLogic> {
        self.params.get(&p)
    }

    /// A logic with no dependencies and uniform structure.
    pub fn empty(tpl: &TransactionTemplate) -> Self {
        let branches = tpl
            .branches()
            .iter()
            .map(|alts| vec![1.0 / alts.len() as f64; alts.len()])
            .collect();
        let loops = tpl.loops().iter().map(|_| 1.0).collect();
        TransactionLogic {
            template: tpl.name.clone(),
            structure: StructureInfo { branches, loops },
            params: BTreeMap::new(),
        }
    }
}

fn check_instances(
    instances: &[TransactionInstance],
    tpl: &TransactionTemplate,
) -> Result<(), LogicError> {
    if instances.is_empty() {
        return Err(LogicError::EmptyTrace(tpl.name.clone()));
    }
    if let Some(bad) = instances.iter().find(|i| i.template != tpl.name) {
        return Err(LogicError::TemplateMismatch {
            expected: tpl.name.clone(),
            found: bad.template.clone(),
        });
    }
    Ok(())
}

/// Branch probabilities and loop averages.
pub fn extract_structure(
    instances: &[TransactionInstance],
    tpl: &TransactionTemplate,
) -> Result<StructureInfo, LogicError> {
    check_instances(instances, tpl)?;
    let mut info = StructureInfo::default();
    for node in &tpl.body {
        match node {
            TemplateNode::Branch(alts) => {
                let mut counts = vec![0usize; alts.len()];
                for inst in instances {
                    for (a, ops) in alts.iter().enumerate() {
                        if ops.iter().any(|o| inst.first(o.index).is_some()) {
                            counts[a] += 1;
                        }
                    }
                }
                let total: usize = counts.iter().sum();
                info.branches.push(if total == 0 {
                    vec![1.0 / alts.len() as f64; alts.len()]
                } else {
                    counts.iter().map(|&c| c as f64 / total as f64).collect()
                });
            }
            TemplateNode::Loop(body) => {
                let runs: usize = instances
                    .iter()
                    .map(|inst| {
                        body.iter()
                            .map(|o| inst.executions(o.index).count())
                            .max()
                            .unwrap_or(0)
                    })
                    .sum();
                info.loops.push(runs as f64 / instances.len() as f64);
            }
            TemplateNode::Op(_) => {}
        }
    }
    Ok(info)
}

/// Mean offset of each syntactic `between ? and ?` pair.
pub fn extract_between(
    instances: &[TransactionInstance],
    tpl: &TransactionTemplate,
) -> BTreeMap<ParamRef, BetweenDep> {
    let mut out = BTreeMap::new();
    for op in tpl.ops() {
        for (l, j) in op.between_pairs() {
            let (mut sum, mut n) = (0.0, 0usize);
            for rec in instances.iter().flat_map(|i| i.executions(op.index)) {
                let lo = rec.params.get(l - 1).and_then(Value::as_f64);
                let hi = rec.params.get(j - 1).and_then(Value::as_f64);
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    sum += hi - lo;
                    n += 1;
                }
            }
            if n > 0 {
                out.insert(
                    op.param_ref(j),
                    BetweenDep {
                        lower: op.param_ref(l),
                        delta: sum / n as f64,
                    },
                );
            }
        }
    }
    out
}

/// First-execution values of every item, column-major over instances.
pub struct ItemTable {
    pub k: usize,
    pub params: BTreeMap<ParamRef, Vec<Option<Value>>>,
    /// First-row values of primary-key-filtered return items.
    pub keyed_returns: BTreeMap<ReturnRef, Vec<Option<Value>>>,
    /// Sorted distinct values over all rows of other return items.
    pub set_returns: BTreeMap<ReturnRef, Vec<Vec<Value>>>,
}

impl ItemTable {
    pub fn build(instances: &[TransactionInstance], tpl: &TransactionTemplate) -> Self {
        let k = instances.len();
        let mut params = BTreeMap::new();
        let mut keyed_returns = BTreeMap::new();
        let mut set_returns = BTreeMap::new();
        for op in tpl.ops() {
            let firsts: Vec<_> = instances.iter().map(|i| i.first(op.index)).collect();
            for j in 1..=op.params.len() {
                let col = firsts
                    .iter()
                    .map(|r| r.and_then(|r| r.params.get(j - 1).cloned()))
                    .collect();
                params.insert(op.param_ref(j), col);
            }
            for v in 1..=op.returns.len() {
                let r = ReturnRef::new(op.index, v);
                if op.filter == FilterKind::PrimaryKey {
                    let col = firsts
                        .iter()
                        .map(|rec| {
                            rec.and_then(|rec| rec.rows.first())
                                .and_then(|row| row.get(v - 1).cloned())
                        })
                        .collect();
                    keyed_returns.insert(r, col);
                } else {
                    let col = firsts
                        .iter()
                        .map(|rec| {
                            let mut vals: Vec<Value> = rec
                                .map(|rec| {
                                    rec.rows
                                        .iter()
                                        .filter_map(|row| row.get(v - 1).cloned())
                                        .collect()
                                })
                                .unwrap_or_default();
                            vals.sort();
                            vals.dedup();
                            vals
                        })
                        .collect();
                    set_returns.insert(r, col);
                }
            }
        }
        ItemTable {
            k,
            params,
            keyed_returns,
            set_returns,
        }
    }

    /// Sources that may precede `target`: earlier parameters of the same
    /// operation, and every parameter and return item of earlier operations.
    pub fn sources_for(&self, target: ParamRef) -> Vec<DepSource> {
        let mut out: Vec<DepSource> = self
            .params
            .keys()
            .filter(|p| p.op < target.op || (p.op == target.op && p.pos < target.pos))
            .map(|p| DepSource::Param(*p))
            .collect();
        out.extend(
            self.keyed_returns
                .keys()
                .chain(self.set_returns.keys())
                .filter(|r| r.op < target.op)
                .map(|r| DepSource::Return(*r)),
        );
        out
    }

    fn first_values(&self, s: DepSource) -> Option<&Vec<Option<Value>>> {
        match s {
            DepSource::Param(p) => self.params.get(&p),
            DepSource::Return(r) => self.keyed_returns.get(&r),
        }
    }
}

/// Equal / inclusive hit counts for one target: `(source, kind, hits, total)`
/// where `total` counts instances in which the target was executed.
pub fn collect_pair_stats(
    table: &ItemTable,
    target: ParamRef,
) -> Vec<(DepSource, DepKind, usize, usize)> {
    let Some(ys) = table.params.get(&target) else {
        return Vec::new();
    };
    let total = ys.iter().filter(|y| y.is_some()).count();
    let mut out = Vec::new();
    for s in table.sources_for(target) {
        if let Some(xs) = table.first_values(s) {
            let hits = xs
                .iter()
                .zip(ys)
                .filter(|(x, y)| y.is_some() && x == y)
                .count();
            out.push((s, DepKind::Equal, hits, total));
        } else if let DepSource::Return(r) = s {
            let sets = &table.set_returns[&r];
            let hits = sets
                .iter()
                .zip(ys)
                .filter(|(set, y)| y.as_ref().is_some_and(|y| set.binary_search(y).is_ok()))
                .count();
            out.push((s, DepKind::Inclusive, hits, total));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub a: f64,
    pub b: f64,
    /// Groups agreeing with the modal solution.
    pub support: usize,
    /// Non-degenerate groups examined.
    pub groups: usize,
}

impl LinearFit {
    pub fn group_pr(&self) -> f64 {
        if self.groups == 0 {
            0.0
        } else {
            self.support as f64 / self.groups as f64
        }
    }
}

fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = 9 - x.abs().log10().ceil() as i32;
    let scale = 10f64.powi(digits);
    let r = (x * scale).round() / scale;
    if r == -0.0 {
        0.0
    } else {
        r
    }
}

/// Solves `y = a*x + b` on pairs of points `(points[i], points[j])` for each
/// group and returns the most frequent solution. Groups whose two `x` are
/// equal carry no slope information and are skipped.
pub fn fit_linear(points: &[(f64, f64)], groups: &[(usize, usize)], n: usize) -> Option<LinearFit> {
    let mut votes: HashMap<(u64, u64), usize> = HashMap::new();
    let mut used = 0;
    for &(i, j) in groups {
        if used == n {
            break;
        }
        let ((x1, y1), (x2, y2)) = (points[i % points.len()], points[j % points.len()]);
        if x1 == x2 {
            continue;
        }
        used += 1;
        let a = round_sig((y1 - y2) / (x1 - x2));
        let b = round_sig(y1 - a * x1);
        *votes.entry((a.to_bits(), b.to_bits())).or_default() += 1;
    }
    let ((a, b), support) = votes
        .into_iter()
        .max_by(|(ka, va), (kb, vb)| va.cmp(vb).then_with(|| kb.cmp(ka)))?;
    Some(LinearFit {
        a: f64::from_bits(a),
        b: f64::from_bits(b),
        support,
        groups: used,
    })
}

/// Deterministic pool of random index pairs, sized for up to `4n` draws.
pub fn group_pool(len: usize, n: usize, seed: u64) -> Vec<(usize, usize)> {
    if len < 2 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed);
    (0..4 * n)
        .map(|_| {
            let i = rng.random_range(0..len);
            let mut j = rng.random_range(0..len - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

fn satisfies(x: f64, y: f64, a: f64, b: f64) -> bool {
    (y - (a * x + b)).abs() <= 1e-6 * y.abs().max(1.0)
}

fn linear_candidates(
    table: &ItemTable,
    target: ParamRef,
    pool: &[(usize, usize)],
    n: usize,
) -> Vec<(DepSource, DepKind, usize, usize)> {
    let Some(ys) = table.params.get(&target) else {
        return Vec::new();
    };
    let ys: Vec<Option<f64>> = ys
        .iter()
        .map(|v| v.as_ref().and_then(Value::as_f64))
        .collect();
    let total = ys.iter().filter(|y| y.is_some()).count();
    let mut out = Vec::new();
    for s in table.sources_for(target) {
        let Some(xs) = table.first_values(s) else {
            continue;
        };
        let xs: Vec<Option<f64>> = xs
            .iter()
            .map(|v| v.as_ref().and_then(Value::as_f64))
            .collect();
        let present: Vec<Option<(f64, f64)>> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| Some(((*x)?, (*y)?)))
            .collect();
        let points: Vec<(f64, f64)> = present.iter().flatten().copied().collect();
        if points.len() < 2 {
            continue;
        }
        let groups: Vec<(usize, usize)> = pool
            .iter()
            .filter_map(|&(i, j)| match (present[i], present[j]) {
                (Some(p), Some(q)) if p.0 != q.0 => Some((i, j)),
                _ => None,
            })
            .collect();
        let dense: Vec<(f64, f64)> = present
            .iter()
            .map(|p| p.unwrap_or((f64::NAN, f64::NAN)))
            .collect();
        let Some(fit) = fit_linear(&dense, &groups, n) else {
            continue;
        };
        if fit.a == 1.0 && fit.b == 0.0 {
            continue;
        }
        let hits = points
            .iter()
            .filter(|(x, y)| satisfies(*x, *y, fit.a, fit.b))
            .count();
        out.push((s, DepKind::Linear { a: fit.a, b: fit.b }, hits, total));
    }
    out
}

/// Trade-off among candidate dependencies of one parameter: drop noise,
/// rank by probability with equal dependencies counted double, then take
/// items in order until the cap is reached or the next would push the
/// probability sum above 1.
pub fn select_deps(mut candidates: Vec<DepItem>, cfg: &ExtractionConfig) -> Vec<DepItem> {
    candidates.retain(|d| d.pr >= cfg.min_pr && d.pr > 0.0);
    let weight = |d: &DepItem| {
        if d.kind == DepKind::Equal {
            2.0 * d.pr
        } else {
            d.pr
        }
    };
    candidates.sort_by(|x, y| {
        weight(y)
            .total_cmp(&weight(x))
            .then_with(|| x.source.cmp(&y.source))
    });
    let mut out = Vec::new();
    let mut sum = 0.0;
    for d in candidates {
        if out.len() == cfg.max_deps || sum + d.pr > 1.0 + 1e-9 {
            break;
        }
        sum += d.pr;
        out.push(d);
    }
    out
}

/// Successive-run relation for each loop parameter.
pub fn extract_loop_deps(
    instances: &[TransactionInstance],
    tpl: &TransactionTemplate,
    cfg: &ExtractionConfig,
    skip: &dyn Fn(ParamRef) -> bool,
) -> BTreeMap<ParamRef, Vec<LoopDep>> {
    let mut out = BTreeMap::new();
    for op in tpl.loops().into_iter().flatten() {
        for j in 1..=op.params.len() {
            let p = op.param_ref(j);
            if skip(p) {
                continue;
            }
            let mut steps: Vec<(Value, Value)> = Vec::new();
            for inst in instances {
                let mut runs: Vec<_> = inst.executions(op.index).collect();
                runs.sort_by_key(|r| r.ordinal);
                for w in runs.windows(2) {
                    if let (Some(x), Some(y)) = (w[0].params.get(j - 1), w[1].params.get(j - 1)) {
                        steps.push((x.clone(), y.clone()));
                    }
                }
            }
            if steps.is_empty() {
                continue;
            }
            let numeric: Option<Vec<(f64, f64)>> = steps
                .iter()
                .map(|(x, y)| Some((x.as_f64()?, y.as_f64()?)))
                .collect();
            let fit = numeric.as_ref().and_then(|pts| {
                let pool = group_pool(
                    pts.len(),
                    cfg.n,
                    seed::derive(cfg.seed, &[p.op as u64, p.pos as u64, 3]),
                );
                let groups: Vec<_> = pool
                    .into_iter()
                    .filter(|&(i, k)| pts[i].0 != pts[k].0)
                    .collect();
                fit_linear(pts, &groups, cfg.n)
            });
            let (a, b, hits) = match (fit, &numeric) {
                (Some(f), Some(pts)) => (
                    f.a,
                    f.b,
                    pts.iter()
                        .filter(|(x, y)| satisfies(*x, *y, f.a, f.b))
                        .count(),
                ),
                _ => (1.0, 0.0, steps.iter().filter(|(x, y)| x == y).count()),
            };
            let pr = hits as f64 / steps.len() as f64;
            if pr >= cfg.min_pr && pr > 0.0 {
                out.insert(p, vec![LoopDep { pr, a, b }]);
            }
        }
    }
    out
}

/// Runs all extraction steps on the first `K` instances.
pub fn extract_transaction_logic(
    instances: &[TransactionInstance],
    tpl: &TransactionTemplate,
    cfg: &ExtractionConfig,
) -> Result<TransactionLogic, LogicError> {
    cfg.check()?;
    let instances = &instances[..instances.len().min(cfg.k)];
    let structure = extract_structure(instances, tpl)?;
    let between = extract_between(instances, tpl);
    let table = ItemTable::build(instances, tpl);
    let pool = group_pool(table.k, cfg.n, seed::derive(cfg.seed, &[4]));

    let targets: Vec<ParamRef> = tpl
        .param_refs()
        .into_iter()
        .filter(|p| !between.contains_key(p))
        .collect();
    let deps: Vec<(ParamRef, Vec<DepItem>)> = targets
        .par_iter()
        .map(|&t| {
            let mut raw = collect_pair_stats(&table, t);
            raw.extend(linear_candidates(&table, t, &pool, cfg.n));
            let items = raw
                .into_iter()
                .filter(|(_, _, _, total)| *total > 0)
                .map(|(source, kind, hits, total)| DepItem {
                    source,
                    kind,
                    pr: hits as f64 / total as f64,
                })
                .collect();
            (t, select_deps(items, cfg))
        })
        .collect();
    let loop_deps = extract_loop_deps(instances, tpl, cfg, &|p| between.contains_key(&p));

    let mut params: BTreeMap<ParamRef, ParamLogic> = BTreeMap::new();
    for (t, b) in between {
        params.entry(t).or_default().between = Some(b);
    }
    for (t, d) in deps {
        if !d.is_empty() {
            params.entry(t).or_default().deps = d;
        }
    }
    for (t, l) in loop_deps {
        params.entry(t).or_default().loop_deps = l;
    }
    Ok(TransactionLogic {
        template: tpl.name.clone(),
        structure,
        params,
    })
}

pub const LOGIC_HEADER: &str = "# tracesynth-logic v1";

/// Text form, one `LOGIC name ... END` block per template.
pub fn write_logic(logics: &[TransactionLogic]) -> String {
    let mut s = String::new();
    writeln!(s, "{LOGIC_HEADER}").unwrap();
    for l in logics {
        write!(s, "{l}").unwrap();
    }
    s
}

impl fmt::Display for TransactionLogic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "LOGIC {}", self.template)?;
        for (i, probs) in self.structure.branches.iter().enumerate() {
            let p: Vec<String> = probs.iter().map(|x| x.to_string()).collect();
            writeln!(f, "branch {}: {}", i + 1, p.join(" "))?;
        }
        for (i, avg) in self.structure.loops.iter().enumerate() {
            writeln!(f, "loop {}: {avg}", i + 1)?;
        }
        for (p, pl) in &self.params {
            if let Some(b) = &pl.between {
                writeln!(f, "pd1 {p} <- {} BR delta={}", b.lower, b.delta)?;
            }
            for d in &pl.deps {
                write!(f, "pd2 {p} <- {} {} pr={}", d.source, d.kind.tag(), d.pr)?;
                if let DepKind::Linear { a, b } = d.kind {
                    write!(f, " a={a} b={b}")?;
                }
                writeln!(f)?;
            }
            for l in &pl.loop_deps {
                writeln!(f, "pd3 {p} LR pr={} a={} b={}", l.pr, l.a, l.b)?;
            }
        }
        writeln!(f, "END")
    }
}

pub fn parse_logic(text: &str) -> Result<Vec<TransactionLogic>, LogicError> {
    let mut out = Vec::new();
    let mut cur: Option<TransactionLogic> = None;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let err = |msg: &str| LogicError::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix("LOGIC ") {
            if cur.is_some() {
                return Err(err("nested LOGIC block"));
            }
            cur = Some(TransactionLogic {
                template: name.trim().to_string(),
                structure: StructureInfo::default(),
                params: BTreeMap::new(),
            });
            continue;
        }
        let logic = cur
            .as_mut()
            .ok_or_else(|| err("line outside a LOGIC block"))?;
        if line == "END" {
            out.push(cur.take().unwrap());
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let kv = |key: &str| -> Result<f64, LogicError> {
            words
                .iter()
                .find_map(|w| w.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(&format!("missing {key}")))
        };
        let param = |w: Option<&&str>| -> Result<ParamRef, LogicError> {
            w.and_then(|w| w.parse().ok())
                .ok_or_else(|| err("bad parameter reference"))
        };
        match words[0] {
            "branch" | "loop" => {
                let (_, rest) = line.split_once(':').ok_or_else(|| err("expected ':'"))?;
                let nums: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
                let nums = nums.map_err(|_| err("bad number"))?;
                if words[0] == "branch" {
                    logic.structure.branches.push(nums);
                } else {
                    logic
                        .structure
                        .loops
                        .push(*nums.first().ok_or_else(|| err("missing average"))?);
                }
            }
            "pd1" => {
                let target = param(words.get(1))?;
                let lower = param(words.get(3))?;
                logic.params.entry(target).or_default().between = Some(BetweenDep {
                    lower,
                    delta: kv("delta")?,
                });
            }
            "pd2" => {
                let target = param(words.get(1))?;
                let source = match words.get(3).and_then(|w| parse_item_ref(w)) {
                    Some(('p', op, pos)) => DepSource::Param(ParamRef::new(op, pos)),
                    Some(('r', op, pos)) => DepSource::Return(ReturnRef::new(op, pos)),
                    _ => return Err(err("bad source reference")),
                };
                let kind = match words.get(4).copied() {
                    Some("ER") => DepKind::Equal,
                    Some("IR") => DepKind::Inclusive,
                    Some("LR") => DepKind::Linear {
                        a: kv("a")?,
                        b: kv("b")?,
                    },
                    _ => return Err(err("unknown dependency kind")),
                };
                logic.params.entry(target).or_default().deps.push(DepItem {
                    source,
                    kind,
                    pr: kv("pr")?,
                });
            }
            "pd3" => {
                let target = param(words.get(1))?;
                let dep = LoopDep {
                    pr: kv("pr")?,
                    a: kv("a")?,
                    b: kv("b")?,
                };
                logic.params.entry(target).or_default().loop_deps.push(dep);
            }
            _ => return Err(err("unknown line")),
        }
    }
    if cur.is_some() {
        return Err(LogicError::Parse {
            line: text.lines().count(),
            msg: "missing END".into(),
        });
    }
    Ok(out)
}

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};

use tracesynth::chars::{extract_characteristics, parse_stats, write_stats, TableCharacteristics};
use tracesynth::dbgen::SyntheticDatabase;
use tracesynth::dist::{
    format_global_line, format_mix_line, format_window_line, parse_dist_file, read_spool,
    write_dist_header, write_spool, CandidateWindow, DistConfig, DistEvent, DistExtractor,
    DistFile, DistMode, HfiRemap, ParamKey, SamplerOptions, SpoolRecord,
};
use tracesynth::logic::{
    extract_transaction_logic, parse_logic, write_logic, ExtractionConfig, TransactionLogic,
};
use tracesynth::model::{
    parse_schema, parse_templates, read_trace, LightTraceRecord, Schema, TraceMode,
};
use tracesynth::sim::{compare, prepare_stream, simulate, KeyResolver, SimConfig, SimMetrics};
use tracesynth::workload::{
    build_candidate_spool, build_sources, DbTarget, ExecutionTarget, Generator, GeneratorConfig,
    MixSchedule, NullTarget, SourceMap,
};
use tracesynth::{TransactionInstance, TransactionTemplate};

use crate::manifest::RunManifest;
use crate::{
    Command, ExtractCharsArgs, ExtractDistArgs, ExtractLogicArgs, GenDbArgs, GenWorkloadArgs,
    InputError, ReportArgs, SimFlags, SimulateArgs, TargetKind,
};

trait InputContext<T> {
    fn input(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Display> InputContext<T> for std::result::Result<T, E> {
    fn input(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| InputError(format!("{}: {e}", what())).into())
    }
}

fn bad_input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub(crate) fn dispatch(cmd: &Command, m: &mut RunManifest) -> Result<()> {
    let inputs: Vec<&Path> = match cmd {
        Command::ExtractChars(a) => vec![&a.schema, &a.data_dir],
        Command::ExtractLogic(a) => vec![&a.templates, &a.trace],
        Command::ExtractDist(a) => [Some(&a.templates), Some(&a.trace), a.stats.as_ref()]
            .into_iter()
            .flatten()
            .map(|p| p.as_path())
            .collect(),
        Command::GenDb(a) => vec![&a.schema, &a.stats],
        Command::GenWorkload(a) => [
            Some(&a.templates),
            a.logic.as_ref(),
            a.dist.as_ref(),
            a.schema.as_ref(),
            a.stats.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(|p| p.as_path())
        .chain(a.spool.as_deref().filter(|p| p.exists()))
        .collect(),
        Command::Simulate(a) => vec![&a.templates, &a.schema, &a.trace],
        Command::Report(a) => vec![&a.real, &a.synth],
    };
    for p in &inputs {
        m.digest(p)
            .input(|| format!("cannot read {}", p.display()))?;
    }
    if cmd.is_evaluation_side() {
        for p in &inputs {
            reject_raw_trace(p)?;
        }
    }
    match cmd {
        Command::ExtractChars(a) => extract_chars(a, m),
        Command::ExtractLogic(a) => extract_logic(a, m),
        Command::ExtractDist(a) => extract_dist(a, m),
        Command::GenDb(a) => gen_db(a, m),
        Command::GenWorkload(a) => gen_workload(a, m),
        Command::Simulate(a) => simulate_trace(a, m),
        Command::Report(a) => report(a, m),
    }
}

/// Evaluation commands work from statistics; a trace file is a mistake.
fn reject_raw_trace(path: &Path) -> Result<()> {
    if path.is_dir() {
        return Err(bad_input(format!(
            "{} is a directory; expected a statistics file",
            path.display()
        )));
    }
    let f = File::open(path).input(|| format!("cannot read {}", path.display()))?;
    for line in BufReader::new(f).lines().take(64) {
        let Ok(line) = line else { return Ok(()) };
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t.starts_with("ts=") {
            return Err(bad_input(format!(
                "{} is a workload trace; evaluation commands read only statistics",
                path.display()
            )));
        }
        return Ok(());
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).input(|| format!("cannot read {}", path.display()))
}

fn load_schema(path: &Path) -> Result<Schema> {
    parse_schema(&read_text(path)?).input(|| format!("schema {}", path.display()))
}

fn load_templates(path: &Path) -> Result<Vec<TransactionTemplate>> {
    parse_templates(&read_text(path)?).input(|| format!("templates {}", path.display()))
}

fn load_stats(path: &Path) -> Result<Vec<TableCharacteristics>> {
    parse_stats(&read_text(path)?).input(|| format!("statistics {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, text: &str, m: &mut RunManifest) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    m.output(path);
    Ok(())
}

fn extract_chars(a: &ExtractCharsArgs, m: &mut RunManifest) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let stats = extract_characteristics(&schema, &a.data_dir)
        .input(|| format!("tables in {}", a.data_dir.display()))?;
    m.set("tables", stats.len());
    write_file(&a.out, &write_stats(&stats), m)
}

fn extract_logic(a: &ExtractLogicArgs, m: &mut RunManifest) -> Result<()> {
    let templates = load_templates(&a.templates)?;
    let cfg = ExtractionConfig {
        k: a.k,
        n: a.n,
        max_deps: a.max_deps,
        min_pr: a.min_pr,
        seed: a.seed,
    };
    m.seed = Some(a.seed);
    m.set("K", a.k);
    m.set("N", a.n);
    m.set("max_deps", a.max_deps);
    m.set("min_pr", a.min_pr);

    let f = File::open(&a.trace).input(|| format!("cannot read {}", a.trace.display()))?;
    let mut reader = read_trace(BufReader::new(f), TraceMode::Heavy).validate_with(&templates);
    let mut by_template: HashMap<String, Vec<TransactionInstance>> = HashMap::new();
    for rec in reader.by_ref() {
        let Some(inst) = rec.into_heavy() else {
            continue;
        };
        let bucket = by_template.entry(inst.template.clone()).or_default();
        if bucket.len() < a.k {
            bucket.push(inst);
        }
    }
    m.set("malformed_lines", reader.malformed_count());
    if reader.malformed_count() > 0 {
        eprintln!(
            "tracesynth extract-logic: skipped {} malformed trace lines",
            reader.malformed_count()
        );
    }

    let mut logics = Vec::with_capacity(templates.len());
    for tpl in &templates {
        match by_template.get(&tpl.name) {
            Some(inst) if !inst.is_empty() => {
                m.set(&format!("instances.{}", tpl.name), inst.len());
                let l = extract_transaction_logic(inst, tpl, &cfg)
                    .input(|| format!("template {}", tpl.name))?;
                logics.push(l);
            }
            _ => logics.push(TransactionLogic::empty(tpl)),
        }
    }
    write_file(&a.out, &write_logic(&logics), m)
}

/// Keeps only the parameters that index data.
fn pivotal_only(mut rec: LightTraceRecord, tpl: &TransactionTemplate) -> LightTraceRecord {
    for op in &mut rec.ops {
        let Some(def) = tpl.op(op.op) else { continue };
        for (slot, v) in def.params.iter().zip(op.params.iter_mut()) {
            if !slot.pivotal {
                *v = None;
            }
        }
    }
    rec
}

fn extract_dist(a: &ExtractDistArgs, m: &mut RunManifest) -> Result<()> {
    if a.i == 0 {
        return Err(bad_input("--I must be at least 1"));
    }
    if a.window_ms == 0 {
        return Err(bad_input("--window-ms must be positive"));
    }
    let templates = load_templates(&a.templates)?;
    let by_name: HashMap<&str, &TransactionTemplate> =
        templates.iter().map(|t| (t.name.as_str(), t)).collect();
    let cfg = DistConfig {
        h: a.h,
        i: a.i,
        window_ms: a.window_ms,
        window_range: !a.fixed_range,
        slack_windows: 1,
    };
    m.set("H", a.h);
    m.set("I", a.i);
    m.set("window_ms", a.window_ms);
    m.set("fixed_range", a.fixed_range);

    let mut ex = DistExtractor::new(cfg.clone(), true);
    if let Some(stats) = &a.stats {
        let stats = load_stats(stats)?;
        for tpl in &templates {
            for op in tpl.ops() {
                for (j, slot) in op.params.iter().enumerate() {
                    let Some(col) = slot.column.as_ref() else {
                        continue;
                    };
                    let domain = stats
                        .iter()
                        .find(|t| t.table == col.table)
                        .and_then(|t| t.column(&col.column))
                        .and_then(|c| c.numeric_domain());
                    if let Some((lo, hi)) = domain {
                        ex.set_domain(ParamKey::new(&tpl.name, op.index, j + 1), lo, hi);
                    }
                }
            }
        }
    }

    let f = File::open(&a.trace).input(|| format!("cannot read {}", a.trace.display()))?;
    let mut reader = read_trace(BufReader::new(f), TraceMode::Light).validate_with(&templates);
    let mut records = reader
        .by_ref()
        .map(|r| {
            let rec = r.into_light();
            let tpl = by_name[rec.template.as_str()];
            pivotal_only(rec, tpl)
        })
        .peekable();
    let origin = records
        .peek()
        .map(|r| r.timestamp)
        .ok_or_else(|| bad_input("trace has no usable records"))?;
    ex.set_origin(origin);

    let mut out = create(&a.out)?;
    out.write_all(write_dist_header(&cfg, origin).as_bytes())?;
    let mut io_err = None;
    let mut windows = 0u64;
    let mut sink = |ev: DistEvent| {
        let line = match ev {
            DistEvent::Window(k, ws) => format_window_line(k, &ws),
            DistEvent::Mix(mw) => {
                windows += 1;
                format_mix_line(&mw)
            }
        };
        if let Err(e) = out.write_all(line.as_bytes()) {
            io_err.get_or_insert(e);
        }
    };
    let mut n = 0u64;
    for rec in records.by_ref() {
        ex.push(&rec, &mut sink);
        n += 1;
    }
    drop(records);
    let late = ex.late_records();
    let global = ex.finish(&mut sink);
    if let Some(e) = io_err {
        return Err(e).context("writing distribution file");
    }
    for (k, d) in &global {
        out.write_all(format_global_line(k, d).as_bytes())?;
    }
    out.flush()?;
    m.output(&a.out);
    m.set("records", n);
    m.set("windows", windows);
    m.set("late_records", late);
    m.set("malformed_lines", reader.malformed_count());
    Ok(())
}

fn gen_db(a: &GenDbArgs, m: &mut RunManifest) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let stats = load_stats(&a.stats)?;
    m.seed = Some(a.seed);
    m.set("parallelism", a.parallelism);
    let db =
        SyntheticDatabase::new(&schema, &stats, a.seed).input(|| "database plan".to_string())?;
    db.write_csv(&a.out_dir, a.parallelism)
        .with_context(|| format!("writing tables to {}", a.out_dir.display()))?;
    for t in db.tables.keys() {
        m.output(&a.out_dir.join(format!("{t}.csv")));
    }
    Ok(())
}

fn parse_fixed_mix(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .map(|item| {
            let (name, w) = item.split_once(':').unwrap_or((item, "1"));
            let w: f64 = w.trim().parse().input(|| format!("mix weight in {item}"))?;
            Ok((name.trim().to_string(), w))
        })
        .collect()
}

fn sim_config(f: &SimFlags, workers: u32) -> SimConfig {
    SimConfig {
        partitions: f.partitions,
        buffer_capacity: f.buffer,
        op_cost_us: f.op_cost_us,
        workers: workers.max(1),
        record_history: false,
    }
}

fn spool_map(records: Vec<SpoolRecord>) -> BTreeMap<ParamKey, Vec<CandidateWindow>> {
    let mut out: BTreeMap<ParamKey, Vec<CandidateWindow>> = BTreeMap::new();
    for r in records {
        out.entry(r.key).or_default().push(r.window);
    }
    for ws in out.values_mut() {
        ws.sort_by_key(|w| w.window);
    }
    out
}

fn gen_workload(a: &GenWorkloadArgs, m: &mut RunManifest) -> Result<()> {
    let templates = load_templates(&a.templates)?;
    let logic = match &a.logic {
        Some(p) => parse_logic(&read_text(p)?).input(|| format!("logic {}", p.display()))?,
        None => Vec::new(),
    };
    let dist: Option<DistFile> = match &a.dist {
        Some(p) => Some(
            parse_dist_file(&read_text(p)?).input(|| format!("distributions {}", p.display()))?,
        ),
        None => None,
    };
    let schema = a.schema.as_deref().map(load_schema).transpose()?;
    let stats = a.stats.as_deref().map(load_stats).transpose()?;
    if let Some(s) = &schema {
        for t in &templates {
            t.validate_against(s)
                .input(|| format!("template {}", t.name))?;
        }
    }
    let db = match (&schema, &stats) {
        (Some(s), Some(st)) => Some(Arc::new(
            SyntheticDatabase::new(s, st, a.seed).input(|| "database plan".to_string())?,
        )),
        _ => None,
    };
    if a.target != TargetKind::Null && db.is_none() {
        return Err(bad_input("--target db and sim need --schema and --stats"));
    }
    if a.target == TargetKind::Sim && a.metrics.is_none() {
        return Err(bad_input("--target sim needs --metrics"));
    }
    if !(a.duration.is_finite() && a.duration > 0.0) {
        return Err(bad_input("--duration must be positive"));
    }

    let schedule = match (&dist, &a.mix) {
        (_, Some(mix)) => {
            let props = parse_fixed_mix(mix)?;
            let refs: Vec<(&str, f64)> = props.iter().map(|(n, w)| (n.as_str(), *w)).collect();
            MixSchedule::fixed(&refs, a.window_ms, a.tps).input(|| "--mix".to_string())?
        }
        (Some(d), None) => MixSchedule::from_mix(&d.mix, d.config.window_ms)
            .input(|| "transaction mix".to_string())?,
        (None, None) => return Err(bad_input("give --dist or --mix")),
    };

    let cfg = GeneratorConfig {
        workers: a.workers,
        first_worker: a.first_worker,
        model: a.model,
        duration_ms: (a.duration * 1000.0).round() as u64,
        seed: a.seed,
        mode: a.mode,
        op_cost_ms: a.op_cost_ms,
    };
    m.seed = Some(a.seed);
    m.set("mode", format!("{:?}", a.mode));
    m.set("model", a.model);
    m.set("workers", a.workers);
    m.set("first_worker", a.first_worker);
    m.set("duration_ms", cfg.duration_ms);
    m.set("op_cost_ms", a.op_cost_ms);
    m.set("target", format!("{:?}", a.target).to_lowercase());

    let sources = match (&dist, &db, &stats) {
        (Some(d), Some(db), Some(st)) => {
            let opts = SamplerOptions {
                mode: a.mode,
                window_ms: d.config.window_ms,
                remap: HfiRemap::Nearest,
                h: d.config.h,
                seed: a.seed,
            };
            let spool = match (&a.spool, a.mode) {
                (Some(p), DistMode::C) => {
                    Some(load_or_build_spool(p, &templates, d, db, st, a.seed, m)?)
                }
                _ => None,
            };
            build_sources(&templates, d, db, st, &opts, spool.as_ref())
        }
        (Some(_), _, _) => {
            return Err(bad_input("--dist needs --schema and --stats to map values"))
        }
        _ => SourceMap::new(),
    };
    let generator = Generator::new(templates.clone(), logic, schedule, sources, cfg)
        .input(|| "generator setup".to_string())?;

    let mut trace = a.emit_trace.as_deref().map(create).transpose()?;
    let mut io_err = None;
    let mut committed_records: Vec<LightTraceRecord> = Vec::new();
    let keep_records = a.target == TargetKind::Sim;
    let by_name: HashMap<&str, &TransactionTemplate> =
        templates.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut sink = |o: tracesynth::workload::Outcome| {
        if let Some(w) = trace.as_mut() {
            if let Err(e) = writeln!(w, "{}", o.instance) {
                io_err.get_or_insert(e);
            }
        }
        if keep_records && o.committed {
            committed_records.push(o.instance.to_light(by_name[o.instance.template.as_str()]));
        }
    };
    let report = match &db {
        Some(db) if a.target != TargetKind::Null => {
            let (db, max_rows) = (db.clone(), a.max_rows);
            generator.run(
                move |_| {
                    Box::new(DbTarget::new(db.clone(), max_rows)) as Box<dyn ExecutionTarget + Send>
                },
                &mut sink,
            )
        }
        _ => generator.run(
            |_| Box::new(NullTarget) as Box<dyn ExecutionTarget + Send>,
            &mut sink,
        ),
    }?;
    if let Some(e) = io_err {
        return Err(e).context("writing trace");
    }
    if let (Some(w), Some(p)) = (trace.as_mut(), &a.emit_trace) {
        w.flush()?;
        m.output(p);
    }
    m.set("transactions", report.transactions);
    m.set("committed", report.committed);
    m.set("aborted", report.aborted);
    m.set("operations", report.operations);
    println!(
        "transactions={} committed={} aborted={} operations={}",
        report.transactions, report.committed, report.aborted, report.operations
    );
    for (t, n) in &report.per_template {
        println!("template.{t}={n}");
    }

    if a.target == TargetKind::Sim {
        let schema = schema.as_ref().expect("checked above");
        let resolver = KeyResolver::new(&templates, schema)
            .input(|| "binding templates to keys".to_string())?;
        let scfg = sim_config(&a.sim, a.workers);
        let txs = prepare_stream(committed_records, &resolver, &scfg)?;
        let metrics = simulate(&txs, &scfg)?.metrics;
        let path = a.metrics.as_ref().expect("checked above");
        write_file(path, &metrics.to_text(), m)?;
        print!("{}", metrics.to_text());
    }
    Ok(())
}

fn load_or_build_spool(
    path: &Path,
    templates: &[TransactionTemplate],
    dist: &DistFile,
    db: &SyntheticDatabase,
    stats: &[TableCharacteristics],
    seed: u64,
    m: &mut RunManifest,
) -> Result<BTreeMap<ParamKey, Vec<CandidateWindow>>> {
    if path.exists() {
        let f = File::open(path).input(|| format!("cannot read {}", path.display()))?;
        let records =
            read_spool(BufReader::new(f)).input(|| format!("spool {}", path.display()))?;
        m.set("spool", "read");
        return Ok(spool_map(records));
    }
    let spool = build_candidate_spool(templates, dist, db, stats, dist.config.h, seed);
    let records: Vec<SpoolRecord> = spool
        .iter()
        .flat_map(|(key, ws)| {
            ws.iter().map(|cw| SpoolRecord {
                key: key.clone(),
                window: cw.clone(),
            })
        })
        .collect();
    write_spool(create(path)?, &records).with_context(|| format!("writing {}", path.display()))?;
    m.set("spool", "written");
    m.output(path);
    Ok(spool)
}

fn simulate_trace(a: &SimulateArgs, m: &mut RunManifest) -> Result<()> {
    let templates = load_templates(&a.templates)?;
    let schema = load_schema(&a.schema)?;
    let resolver =
        KeyResolver::new(&templates, &schema).input(|| "binding templates to keys".to_string())?;
    let cfg = sim_config(&a.sim, a.workers);
    cfg.validate().input(|| "simulator".to_string())?;
    m.set("partitions", cfg.partitions);
    m.set("buffer", cfg.buffer_capacity);
    m.set("op_cost_us", cfg.op_cost_us);
    m.set("workers", cfg.workers);

    let f = File::open(&a.trace).input(|| format!("cannot read {}", a.trace.display()))?;
    let mut reader = read_trace(BufReader::new(f), TraceMode::Light).validate_with(&templates);
    let records: Vec<LightTraceRecord> = reader.by_ref().map(|r| r.into_light()).collect();
    m.set("malformed_lines", reader.malformed_count());
    if records.is_empty() {
        return Err(bad_input(format!(
            "{} has no usable records",
            a.trace.display()
        )));
    }
    let txs = prepare_stream(records, &resolver, &cfg).input(|| "trace".to_string())?;
    let metrics = simulate(&txs, &cfg)?.metrics;
    write_file(&a.out, &metrics.to_text(), m)?;
    print!("{}", metrics.to_text());
    Ok(())
}

fn report(a: &ReportArgs, m: &mut RunManifest) -> Result<()> {
    let load = |p: &Path| -> Result<SimMetrics> {
        SimMetrics::parse(&read_text(p)?).input(|| format!("metrics {}", p.display()))
    };
    let real = load(&a.real)?;
    let synth = load(&a.synth)?;
    m.set("threshold", a.threshold);
    let r = compare(&real, &synth, a.threshold).input(|| "comparison".to_string())?;
    print!("{}", r.to_table());
    let flagged = r.flagged().count();
    println!(
        "{} of {} metrics deviate by more than {:.0}%",
        flagged,
        r.rows.len(),
        a.threshold * 100.0
    );
    m.set("flagged", flagged);
    if let Some(out) = &a.out {
        write_file(out, &r.to_stats(), m)?;
    }
    Ok(())
}

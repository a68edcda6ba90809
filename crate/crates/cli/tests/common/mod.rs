//! Fixtures shared by the command-line tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use tracesynth::chars::{parse_stats, TableCharacteristics};
use tracesynth::dbgen::SyntheticDatabase;
use tracesynth::dist::{build_sdist, HfiRemap, ParamKey, ParamSampler, SamplerOptions, ValueSpace};
use tracesynth::logic::{
    BetweenDep, DepItem, DepKind, DepSource, LoopDep, ParamLogic, StructureInfo, TransactionLogic,
};
use tracesynth::model::{parse_schema, parse_templates};
use tracesynth::workload::{
    DbTarget, ExecutionModel, ExecutionTarget, Generator, GeneratorConfig, MixSchedule,
    ParamSource, SourceMap,
};
use tracesynth::{ParamRef, Value};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tracesynth")
}

pub fn tracesynth(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn tracesynth")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// `key=value` pairs of a manifest file.
pub fn manifest_fields(path: &Path) -> Vec<(String, String)> {
    tracesynth_cli::parse_manifest(&fs::read_to_string(path).unwrap()).expect("manifest format")
}

pub fn p(op: usize, pos: usize) -> ParamRef {
    ParamRef::new(op, pos)
}

pub fn er(src: ParamRef, pr: f64) -> DepItem {
    DepItem {
        source: DepSource::Param(src),
        kind: DepKind::Equal,
        pr,
    }
}

// ---------------------------------------------------------------- logic

pub const LOGIC_SCHEMA: &str = "
    TABLE Z (z1 integer, z2 decimal, z3 decimal) PK(z1)
    TABLE S (s1 integer, s2 integer, s3 decimal) PK(s1) FK(s1 -> Z(z1))
    TABLE T (t1 integer, t2 integer, t3 decimal) PK(t1, t2) FK(t1 -> S(s1))
";

pub const LOGIC_TEMPLATES: &str = r#"
TEMPLATE tx1 {
  "update S set s3 = s3 + ? where s1 = ?" params(S.s3:decimal, where S.s1:integer) filter=pk;
  "update T set t3 = t3 + ? where t1 = ? and t2 = ?"
      params(T.t3:decimal, where T.t1:integer, where T.t2:integer) filter=pk;
  "select z2, z3 from Z where z1 = ?" params(where Z.z1:integer) filter=pk -> returns(Z.z2:decimal, Z.z3:decimal);
  "update Z set z2 = z2 - ? where z1 = ?" params(Z.z2:decimal, where Z.z1:integer) filter=pk;
}
TEMPLATE tx3 {
  BRANCH {
    { "select s1 from S where s2 between ? and ?" params(where S.s2:integer, where S.s2:integer) -> returns(S.s1:integer); }
  | { "select s1 from S where s3 = ?" params(where S.s3:decimal) -> returns(S.s1:integer); }
  };
  "update Z set z2 = ? where z1 = ?" params(Z.z2:decimal, where Z.z1:integer) filter=pk;
  LOOP { "insert into T values (?, ?, ?)" params(key T.t1:integer, key T.t2:integer, T.t3:decimal); };
}
"#;

/// Logic planted into the generator: equalities at 0.99 and 1.0, a
/// between pair 8 apart, a 0.4/0.6 branch, ten loop runs on average and
/// successive-run relations `x` and `x + 1`.
pub fn planted_logic() -> Vec<TransactionLogic> {
    let tx1 = TransactionLogic {
        template: "tx1".into(),
        structure: StructureInfo::default(),
        params: BTreeMap::from([
            (
                p(2, 2),
                ParamLogic {
                    deps: vec![er(p(1, 2), 0.99)],
                    ..Default::default()
                },
            ),
            (
                p(4, 2),
                ParamLogic {
                    deps: vec![er(p(3, 1), 1.0)],
                    ..Default::default()
                },
            ),
        ]),
    };
    let tx3 = TransactionLogic {
        template: "tx3".into(),
        structure: StructureInfo {
            branches: vec![vec![0.4, 0.6]],
            loops: vec![10.0],
        },
        params: BTreeMap::from([
            (
                p(1, 2),
                ParamLogic {
                    between: Some(BetweenDep {
                        lower: p(1, 1),
                        delta: 8.0,
                    }),
                    ..Default::default()
                },
            ),
            (
                p(4, 1),
                ParamLogic {
                    deps: vec![er(p(3, 2), 1.0)],
                    loop_deps: vec![LoopDep {
                        pr: 1.0,
                        a: 1.0,
                        b: 0.0,
                    }],
                    ..Default::default()
                },
            ),
            (
                p(4, 2),
                ParamLogic {
                    loop_deps: vec![LoopDep {
                        pr: 1.0,
                        a: 1.0,
                        b: 1.0,
                    }],
                    ..Default::default()
                },
            ),
        ]),
    };
    vec![tx1, tx3]
}

/// Writes a heavy trace of `per_template` instances of each logic template.
pub fn write_logic_trace(path: &Path, per_template: usize, seed: u64) {
    let tpls = parse_templates(LOGIC_TEMPLATES).unwrap();
    let mut out = BufWriter::new(fs::File::create(path).unwrap());
    for (k, name) in ["tx1", "tx3"].into_iter().enumerate() {
        let sched = MixSchedule::fixed(&[(name, 1.0)], 1000, 1000.0).unwrap();
        let cfg = GeneratorConfig {
            model: ExecutionModel::FixedTps(1000.0),
            duration_ms: per_template as u64 + 1,
            seed: seed + k as u64,
            op_cost_ms: 0.01,
            ..Default::default()
        };
        let g =
            Generator::new(tpls.clone(), planted_logic(), sched, SourceMap::new(), cfg).unwrap();
        let mut n = 0;
        g.run(
            |_| Box::new(tracesynth::workload::NullTarget) as Box<dyn ExecutionTarget + Send>,
            &mut |o| {
                if n < per_template {
                    writeln!(out, "{}", o.instance).unwrap();
                    n += 1;
                }
            },
        )
        .unwrap();
        assert_eq!(n, per_template);
    }
    out.flush().unwrap();
}

// ---------------------------------------------------------------- database

pub const ZST_SCHEMA: &str = "
    TABLE Z (z1 integer, z2 decimal, z3 decimal) PK(z1)
    TABLE S (s1 integer, s2 integer, s3 varchar) PK(s1, s2) FK(s1 -> Z(z1))
    TABLE T (t1 integer, t2 integer, t3 integer) PK(t1, t2) FK(t1 -> S(s1))
";

/// Sizes 100/1000/2000; every non-key column has one distinct value per
/// hundred rows.
pub const ZST_STATS: &str = "# tracesynth-chars v1
[table Z]
size = 100
[column Z.z2]
type = decimal
min = 0.0
max = 1.0
cardinality = 1
[column Z.z3]
type = decimal
min = 10.0
max = 20.0
cardinality = 1
[table S]
size = 1000
[column S.s3]
type = varchar
min_len = 4
max_len = 12
cardinality = 10
[table T]
size = 2000
[column T.t3]
type = integer
min = 1
max = 500
cardinality = 20
";

// ---------------------------------------------------------------- payment

pub const PAYMENT_SCHEMA: &str = "
    TABLE WAREHOUSE (w_id integer, w_ytd decimal) PK(w_id)
    TABLE DISTRICT (d_w_id integer, d_id integer, d_ytd decimal) PK(d_w_id, d_id) FK(d_w_id -> WAREHOUSE(w_id))
    TABLE CUSTOMER (c_w_id integer, c_id integer, c_balance decimal) PK(c_w_id, c_id) FK(c_w_id -> WAREHOUSE(w_id))
";

pub const PAYMENT_STATS: &str = "# tracesynth-chars v1
[table WAREHOUSE]
size = 10
[column WAREHOUSE.w_ytd]
type = decimal
min = 0.0
max = 1000.0
cardinality = 10
[table DISTRICT]
size = 100
[column DISTRICT.d_ytd]
type = decimal
min = 0.0
max = 1000.0
cardinality = 100
[table CUSTOMER]
size = 3000
[column CUSTOMER.c_balance]
type = decimal
min = 0.0
max = 5000.0
cardinality = 500
";

pub const PAYMENT_TEMPLATES: &str = r#"
TEMPLATE payment {
  "update WAREHOUSE set w_ytd = w_ytd + ? where w_id = ?"
      params(WAREHOUSE.w_ytd:decimal, where WAREHOUSE.w_id:integer) filter=pk;
  "update DISTRICT set d_ytd = d_ytd + ? where d_w_id = ? and d_id = ?"
      params(DISTRICT.d_ytd:decimal, where DISTRICT.d_w_id:integer, where DISTRICT.d_id:integer) filter=pk;
  "select c_balance from CUSTOMER where c_w_id = ? and c_id = ?"
      params(where CUSTOMER.c_w_id:integer, where CUSTOMER.c_id:integer) filter=pk
      -> returns(CUSTOMER.c_balance:decimal);
  "update CUSTOMER set c_balance = ? where c_w_id = ? and c_id = ?"
      params(CUSTOMER.c_balance:decimal, where CUSTOMER.c_w_id:integer, where CUSTOMER.c_id:integer) filter=pk;
}
"#;

/// Every key of a payment follows its warehouse.
pub fn payment_logic() -> Vec<TransactionLogic> {
    vec![TransactionLogic {
        template: "payment".into(),
        structure: StructureInfo::default(),
        params: BTreeMap::from([
            (
                p(2, 2),
                ParamLogic {
                    deps: vec![er(p(1, 2), 1.0)],
                    ..Default::default()
                },
            ),
            (
                p(3, 1),
                ParamLogic {
                    deps: vec![er(p(1, 2), 1.0)],
                    ..Default::default()
                },
            ),
            (
                p(4, 2),
                ParamLogic {
                    deps: vec![er(p(3, 1), 1.0)],
                    ..Default::default()
                },
            ),
            (
                p(4, 3),
                ParamLogic {
                    deps: vec![er(p(3, 2), 1.0)],
                    ..Default::default()
                },
            ),
        ]),
    }]
}

/// Identity value space over `[1, n]`.
pub fn key_space(n: i64) -> ValueSpace {
    ValueSpace::Key {
        real_lo: 1.0,
        real_hi: n as f64,
        syn_lo: 1,
        syn_hi: n,
    }
}

/// Zipf-like weights `k^-s` over `1..=n`.
pub fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// A source drawing `1..=n` with the given probabilities.
fn weighted_source(weights: &[f64]) -> Arc<ParamSource> {
    // a large exact sample keeps every value as a hot item
    let mut vals = Vec::new();
    for (k, w) in weights.iter().enumerate() {
        let c = (w * 1_000_000.0).round() as usize;
        vals.extend(std::iter::repeat_n(Value::Int(k as i64 + 1), c.max(1)));
    }
    let n = weights.len();
    let s = build_sdist(vals, Some((1.0, n as f64)), n, 1).unwrap();
    let opts = SamplerOptions {
        mode: tracesynth::dist::DistMode::S,
        remap: HfiRemap::Nearest,
        ..Default::default()
    };
    Arc::new(ParamSource::Dist(Box::new(ParamSampler::build(
        &s,
        &[],
        key_space(n as i64),
        &opts,
        None,
    ))))
}

/// Warehouse skew of the payment application.
pub fn payment_warehouse_weights() -> Vec<f64> {
    zipf_weights(10, 0.8)
}

/// The production payment application: a skewed warehouse, uniform
/// district and a hot set of customers.
pub fn payment_sources() -> SourceMap {
    let mut m = SourceMap::new();
    m.insert(
        ParamKey::new("payment", 1, 2),
        weighted_source(&payment_warehouse_weights()),
    );
    m.insert(ParamKey::new("payment", 2, 3), weighted_source(&[0.1; 10]));
    m.insert(
        ParamKey::new("payment", 3, 2),
        weighted_source(&zipf_weights(300, 1.1)),
    );
    m
}

/// Runs the payment application and writes its heavy trace.
pub fn write_payment_trace(path: &Path, workers: u32, duration_ms: u64, seed: u64) {
    let schema = parse_schema(PAYMENT_SCHEMA).unwrap();
    let stats: Vec<TableCharacteristics> = parse_stats(PAYMENT_STATS).unwrap();
    let db = Arc::new(SyntheticDatabase::new(&schema, &stats, seed).unwrap());
    let tpls = parse_templates(PAYMENT_TEMPLATES).unwrap();
    let sched = MixSchedule::fixed(&[("payment", 1.0)], 1000, 1000.0).unwrap();
    let cfg = GeneratorConfig {
        workers,
        model: ExecutionModel::NoAwaitInLoop,
        duration_ms,
        seed,
        op_cost_ms: 0.5,
        mode: tracesynth::dist::DistMode::S,
        ..Default::default()
    };
    let g = Generator::new(tpls, payment_logic(), sched, payment_sources(), cfg).unwrap();
    let mut out = BufWriter::new(fs::File::create(path).unwrap());
    g.run(
        |_| Box::new(DbTarget::new(db.clone(), 10)) as Box<dyn ExecutionTarget + Send>,
        &mut |o| writeln!(out, "{}", o.instance).unwrap(),
    )
    .unwrap();
    out.flush().unwrap();
}

//! Logic planted in the generator comes back out of extraction.

use std::collections::BTreeMap;
use std::io::BufReader;

use tracesynth::dist::ParamKey;
use tracesynth::logic::{
    extract_transaction_logic, BetweenDep, DepItem, DepKind, DepSource, ExtractionConfig, LoopDep,
    ParamLogic, StructureInfo, TransactionLogic,
};
use tracesynth::model::{parse_templates, read_trace, TraceMode};
use tracesynth::seed;
use tracesynth::workload::{Generator, GeneratorConfig, MixSchedule, NullTarget, SourceMap};
use tracesynth::{ParamRef, TransactionInstance};

const TEMPLATES: &str = r#"
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

fn p(op: usize, pos: usize) -> ParamRef {
    ParamRef::new(op, pos)
}

fn er(src: ParamRef, pr: f64) -> DepItem {
    DepItem {
        source: DepSource::Param(src),
        kind: DepKind::Equal,
        pr,
    }
}

fn planted() -> Vec<TransactionLogic> {
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

fn generate(name: &str, n: usize) -> (Vec<TransactionInstance>, BTreeMap<ParamKey, u64>) {
    let tpls = parse_templates(TEMPLATES).unwrap();
    let sched = MixSchedule::fixed(&[(name, 1.0)], 1000, 1.0).unwrap();
    let g = Generator::new(
        tpls,
        planted(),
        sched,
        SourceMap::new(),
        GeneratorConfig::default(),
    )
    .unwrap();
    let mut rng = seed::rng(42);
    let mut calls = BTreeMap::new();
    let mut text = String::new();
    for k in 0..n {
        let out = g
            .execute_transaction(name, 0, k as u64, &mut NullTarget, &mut rng, &mut |key| {
                *calls.entry(key).or_insert(0) += 1
            })
            .unwrap();
        text.push_str(&format!("{}\n", out.instance));
    }
    let back: Vec<TransactionInstance> =
        read_trace(BufReader::new(text.as_bytes()), TraceMode::Heavy)
            .filter_map(|r| r.into_heavy())
            .collect();
    assert_eq!(back.len(), n);
    (back, calls)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 0.02
}

#[test]
fn tx1_equalities_survive_the_loop() {
    let tpl = parse_templates(TEMPLATES).unwrap().remove(0);
    let (inst, calls) = generate("tx1", 10_000);
    assert_eq!(calls.get(&ParamKey::new("tx1", 4, 2)), None);
    let cfg = ExtractionConfig {
        k: 10_000,
        n: 10_000,
        ..Default::default()
    };
    let l = extract_transaction_logic(&inst, &tpl, &cfg).unwrap();
    let d22 = &l.param(p(2, 2)).unwrap().deps;
    assert_eq!(d22.len(), 1);
    assert_eq!(d22[0].source, DepSource::Param(p(1, 2)));
    assert!(close(d22[0].pr, 0.99), "{}", d22[0].pr);
    assert_eq!(l.param(p(4, 2)).unwrap().deps, vec![er(p(3, 1), 1.0)]);
}

#[test]
fn tx3_structure_and_dependencies_survive_the_loop() {
    let tpl = parse_templates(TEMPLATES).unwrap().remove(1);
    let (inst, calls) = generate("tx3", 10_000);
    assert_eq!(calls.get(&ParamKey::new("tx3", 4, 1)), None);
    let cfg = ExtractionConfig {
        k: 10_000,
        n: 10_000,
        ..Default::default()
    };
    let l = extract_transaction_logic(&inst, &tpl, &cfg).unwrap();
    assert!(close(l.structure.branches[0][0], 0.4) && close(l.structure.branches[0][1], 0.6));
    assert!((l.structure.loops[0] - 10.0).abs() <= 0.2);
    assert_eq!(
        l.param(p(1, 2)).unwrap().between,
        Some(BetweenDep {
            lower: p(1, 1),
            delta: 8.0
        })
    );
    let p41 = l.param(p(4, 1)).unwrap();
    assert_eq!(p41.deps, vec![er(p(3, 2), 1.0)]);
    assert_eq!(
        p41.loop_deps,
        vec![LoopDep {
            pr: 1.0,
            a: 1.0,
            b: 0.0
        }]
    );
    assert_eq!(
        l.param(p(4, 2)).unwrap().loop_deps,
        vec![LoopDep {
            pr: 1.0,
            a: 1.0,
            b: 1.0
        }]
    );
}

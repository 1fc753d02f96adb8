//! Property tests for the rule DSL: print/parse round trips against a
//! random AST generator, and evaluation against an exhaustive truth-table
//! oracle that works directly over presence assignments.

use phenolab_core::cohort::{Code, PatientRecord};
use phenolab_core::rule::{parse_rule, PhenotypeDefinition, Predicate, RuleExpr};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    ((rng.next_u64() as u128 * n as u128) >> 64) as u64
}

fn random_code(rng: &mut ChaCha8Rng) -> Code {
    let namespaces = ["ICD9", "CPT", "RX", "LAB", "DEMO", ""];
    let ns = namespaces[below(rng, 6) as usize];
    let value = match below(rng, 4) {
        0 => format!("{}.{:02}", below(rng, 999), below(rng, 99)),
        1 => format!("X{}", below(rng, 10_000)),
        2 => format!("a-{}_b", below(rng, 50)),
        _ => "A1C".to_string(),
    };
    let full = if ns.is_empty() {
        value
    } else if ns == "DEMO" {
        format!("DEMO:gender={}", if below(rng, 2) == 0 { "F" } else { "M" })
    } else {
        format!("{ns}:{value}")
    };
    Code::new(full).unwrap()
}

fn random_predicate(rng: &mut ChaCha8Rng) -> Predicate {
    match below(rng, 4) {
        0 | 1 => Predicate::HasCode { code: random_code(rng) },
        2 => Predicate::CountAtLeast { code: random_code(rng), threshold: below(rng, 5) as u32 },
        _ => Predicate::AgeAtLeast { threshold: below(rng, 111) as u32 },
    }
}

fn random_expr(rng: &mut ChaCha8Rng, depth: usize) -> RuleExpr {
    if depth == 0 || below(rng, 3) == 0 {
        return RuleExpr::Atom(random_predicate(rng));
    }
    match below(rng, 3) {
        0 => {
            let n = 2 + below(rng, 3) as usize;
            RuleExpr::and((0..n).map(|_| random_expr(rng, depth - 1)).collect()).unwrap()
        }
        1 => {
            let n = 2 + below(rng, 3) as usize;
            RuleExpr::or((0..n).map(|_| random_expr(rng, depth - 1)).collect()).unwrap()
        }
        _ => RuleExpr::not(random_expr(rng, depth - 1)),
    }
}

#[test]
fn print_parse_round_trip_on_1000_random_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    for i in 0..1000 {
        let def =
            PhenotypeDefinition::new(format!("R{i}"), random_expr(&mut rng, 5)).unwrap();
        let printed = def.canonical();
        let reparsed = parse_rule(&printed)
            .unwrap_or_else(|e| panic!("failed to reparse {printed:?}: {e}"));
        assert_eq!(reparsed, def, "round trip changed {printed:?}");
    }
}

/// Second evaluator used as the truth-table oracle: resolves each atom
/// from a plain presence assignment instead of a patient record.
fn oracle_eval(expr: &RuleExpr, codes: &[Code], assignment: u32) -> bool {
    match expr {
        RuleExpr::Atom(Predicate::HasCode { code }) => {
            let idx = codes.iter().position(|c| c == code).expect("atom from pool");
            assignment & (1 << idx) != 0
        }
        RuleExpr::Atom(_) => unreachable!("pool contains only presence atoms"),
        RuleExpr::And(children) => children.iter().all(|c| oracle_eval(c, codes, assignment)),
        RuleExpr::Or(children) => children.iter().any(|c| oracle_eval(c, codes, assignment)),
        RuleExpr::Not(child) => !oracle_eval(child, codes, assignment),
    }
}

fn random_presence_expr(rng: &mut ChaCha8Rng, codes: &[Code], depth: usize) -> RuleExpr {
    if depth == 0 || below(rng, 3) == 0 {
        let code = codes[below(rng, codes.len() as u64) as usize].clone();
        return RuleExpr::Atom(Predicate::HasCode { code });
    }
    match below(rng, 3) {
        0 => RuleExpr::and(
            (0..2 + below(rng, 2) as usize)
                .map(|_| random_presence_expr(rng, codes, depth - 1))
                .collect(),
        )
        .unwrap(),
        1 => RuleExpr::or(
            (0..2 + below(rng, 2) as usize)
                .map(|_| random_presence_expr(rng, codes, depth - 1))
                .collect(),
        )
        .unwrap(),
        _ => RuleExpr::not(random_presence_expr(rng, codes, depth - 1)),
    }
}

fn record_for_assignment(codes: &[Code], assignment: u32) -> PatientRecord {
    let mut r = PatientRecord::new(0, 50, "F", "R0", "E0").unwrap();
    for (i, code) in codes.iter().enumerate() {
        if assignment & (1 << i) != 0 {
            r.add_occurrences(code.clone(), 1).unwrap();
        }
    }
    r
}

#[test]
fn evaluator_matches_exhaustive_truth_table() {
    let codes: Vec<Code> =
        (0..6).map(|i| Code::new(format!("ICD9:C{i}")).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let expr = random_presence_expr(&mut rng, &codes, 4);
        let def = PhenotypeDefinition::new("T", expr.clone()).unwrap();
        for assignment in 0..(1u32 << 6) {
            let record = record_for_assignment(&codes, assignment);
            assert_eq!(
                def.evaluate(&record),
                oracle_eval(&expr, &codes, assignment),
                "mismatch on assignment {assignment:06b} for {}",
                def.canonical()
            );
        }
    }
}

#[test]
fn de_morgan_holds_on_sampled_records() {
    let codes: Vec<Code> =
        (0..6).map(|i| Code::new(format!("RX:D{i}")).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let a = random_presence_expr(&mut rng, &codes, 3);
        let b = random_presence_expr(&mut rng, &codes, 3);
        let not_and =
            RuleExpr::not(RuleExpr::and(vec![a.clone(), b.clone()]).unwrap());
        let or_nots =
            RuleExpr::or(vec![RuleExpr::not(a.clone()), RuleExpr::not(b.clone())]).unwrap();
        for assignment in 0..(1u32 << 6) {
            let record = record_for_assignment(&codes, assignment);
            assert_eq!(not_and.evaluate(&record), or_nots.evaluate(&record));
        }
    }
}

#[test]
fn evaluation_is_pure() {
    let def = parse_rule("P := (has(ICD9:1) or count(RX:2)>=3) and age>=40").unwrap();
    let mut r = PatientRecord::new(0, 44, "M", "R1", "E1").unwrap();
    r.add_occurrences(Code::new("RX:2").unwrap(), 3).unwrap();
    let first = def.evaluate(&r);
    for _ in 0..50 {
        assert_eq!(def.evaluate(&r), first);
    }
    assert!(first);
}

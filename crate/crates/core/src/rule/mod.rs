//! Boolean rule definitions over code predicates.
//!
//! Grammar (one definition per line in files):
//!
//! ```text
//! def    := NAME ":=" expr
//! expr   := term ("or" term)*
//! term   := factor ("and" factor)*
//! factor := "not" factor | "(" expr ")" | pred
//! pred   := "has(" code ")" | "count(" code ")>=" INT | "age>=" INT
//! code   := TOKEN (":" TOKEN)?
//! ```
//!
//! Printing is canonical: fully parenthesized and/or groups, `not (...)`,
//! single spaces, lowercase keywords. `parse(print(d))` reproduces `d`
//! exactly. Definitions are immutable once built and safe to share across
//! threads.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::cohort::{Code, PatientRecord};

mod parse;
pub use parse::{parse_rule, ParseError};

/// An atomic condition on a patient record.
///
/// Unknown codes evaluate as count 0, so definitions stay portable across
/// vocabularies. Temporal predicates are deliberately unsupported.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    /// True iff the code occurs at least once.
    HasCode { code: Code },
    /// True iff the code occurs at least `threshold` times.
    CountAtLeast { code: Code, threshold: u32 },
    /// True iff age in years is at least `threshold`.
    AgeAtLeast { threshold: u32 },
}

impl Predicate {
    pub fn evaluate(&self, record: &PatientRecord) -> bool {
        match self {
            Predicate::HasCode { code } => record.code_count(code) >= 1,
            Predicate::CountAtLeast { code, threshold } => record.code_count(code) >= *threshold,
            Predicate::AgeAtLeast { threshold } => record.age >= *threshold,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::HasCode { code } => write!(f, "has({code})"),
            Predicate::CountAtLeast { code, threshold } => write!(f, "count({code})>={threshold}"),
            Predicate::AgeAtLeast { threshold } => write!(f, "age>={threshold}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleError {
    /// `and`/`or` need at least two children.
    ArityTooLow { operator: &'static str, arity: usize },
    EmptyName,
}

impl fmt::Display for RuleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleError::ArityTooLow { operator, arity } => {
                write!(f, "{operator} needs at least 2 children, got {arity}")
            }
            RuleError::EmptyName => write!(f, "definition name is empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RuleError {}

/// A finite boolean expression tree. `And`/`Or` hold two or more children.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RuleExpr {
    Atom(Predicate),
    And(Vec<RuleExpr>),
    Or(Vec<RuleExpr>),
    Not(Box<RuleExpr>),
}

impl RuleExpr {
    pub fn atom(p: Predicate) -> Self {
        RuleExpr::Atom(p)
    }

    pub fn and(children: Vec<RuleExpr>) -> Result<Self, RuleError> {
        if children.len() < 2 {
            return Err(RuleError::ArityTooLow { operator: "and", arity: children.len() });
        }
        Ok(RuleExpr::And(children))
    }

    pub fn or(children: Vec<RuleExpr>) -> Result<Self, RuleError> {
        if children.len() < 2 {
            return Err(RuleError::ArityTooLow { operator: "or", arity: children.len() });
        }
        Ok(RuleExpr::Or(children))
    }

    pub fn not(child: RuleExpr) -> Self {
        RuleExpr::Not(Box::new(child))
    }

    pub fn evaluate(&self, record: &PatientRecord) -> bool {
        match self {
            RuleExpr::Atom(p) => p.evaluate(record),
            RuleExpr::And(children) => children.iter().all(|c| c.evaluate(record)),
            RuleExpr::Or(children) => children.iter().any(|c| c.evaluate(record)),
            RuleExpr::Not(child) => !child.evaluate(record),
        }
    }

    fn collect_atoms<'a>(&'a self, seen: &mut Vec<&'a Predicate>) {
        match self {
            RuleExpr::Atom(p) => {
                if !seen.contains(&p) {
                    seen.push(p);
                }
            }
            RuleExpr::And(children) | RuleExpr::Or(children) => {
                for c in children {
                    c.collect_atoms(seen);
                }
            }
            RuleExpr::Not(child) => child.collect_atoms(seen),
        }
    }
}

impl fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleExpr::Atom(p) => write!(f, "{p}"),
            RuleExpr::And(children) => {
                f.write_str("(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
            RuleExpr::Or(children) => {
                f.write_str("(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" or ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
            RuleExpr::Not(child) => write!(f, "not ({child})"),
        }
    }
}

/// A named rule; the unit stored one-per-line in definition files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhenotypeDefinition {
    pub name: String,
    pub expr: RuleExpr,
}

impl PhenotypeDefinition {
    pub fn new(name: impl Into<String>, expr: RuleExpr) -> Result<Self, RuleError> {
        let name = name.into();
        if name.is_empty() {
            return Err(RuleError::EmptyName);
        }
        Ok(Self { name, expr })
    }

    pub fn evaluate(&self, record: &PatientRecord) -> bool {
        self.expr.evaluate(record)
    }

    /// Canonical printed form; `parse_rule` reproduces the definition.
    pub fn canonical(&self) -> String {
        alloc::format!("{self}")
    }
}

impl fmt::Display for PhenotypeDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} := {}", self.name, self.expr)
    }
}

/// The distinct predicates of a definition, in first-appearance order of a
/// left-to-right depth-first traversal. Stable across runs and processes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleFeatureSet {
    features: Vec<Predicate>,
}

impl OracleFeatureSet {
    pub fn features(&self) -> &[Predicate] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub fn extract_oracle_features(def: &PhenotypeDefinition) -> OracleFeatureSet {
    let mut seen = Vec::new();
    def.expr.collect_atoms(&mut seen);
    OracleFeatureSet { features: seen.into_iter().cloned().collect() }
}

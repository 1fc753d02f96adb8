//! Phenotype complexity via combination histograms.
//!
//! Each patient maps to a binary string recording which of a definition's
//! oracle features they satisfy; strings hash into a fixed number of
//! buckets (FNV-1a 64, then modulo) separately for cases and controls.
//! Case entropy summarizes how diverse the positives are; KL divergence
//! from the control to the case distribution (Laplace-smoothed) measures
//! how separable the classes are over those features.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cohort::PatientRecord;
use crate::math;
use crate::rule::{extract_oracle_features, OracleFeatureSet, PhenotypeDefinition};

pub const DEFAULT_BUCKETS: usize = 32;
pub const DEFAULT_ALPHA: f64 = 1.0;

const FNV_OFFSET_BASIS: u64 = 14695981039346656037;
const FNV_PRIME: u64 = 1099511628211;

/// FNV-1a 64-bit hash; fixed constants keep bucket assignment identical
/// across platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

#[derive(Clone, Debug, PartialEq)]
pub enum ComplexityError {
    TooFewBuckets { got: usize },
    EmptyHistogram,
    BucketCountMismatch { cases: usize, controls: usize },
    InvalidAlpha(f64),
    DegenerateClasses { cases: usize, controls: usize },
}

impl fmt::Display for ComplexityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComplexityError::TooFewBuckets { got } => {
                write!(f, "need at least 2 buckets, got {got}")
            }
            ComplexityError::EmptyHistogram => write!(f, "histogram has no mass"),
            ComplexityError::BucketCountMismatch { cases, controls } => {
                write!(f, "bucket counts differ: {cases} vs {controls}")
            }
            ComplexityError::InvalidAlpha(a) => write!(f, "smoothing pseudo-count {a} must be > 0"),
            ComplexityError::DegenerateClasses { cases, controls } => {
                write!(f, "need at least one case and one control, got {cases}/{controls}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ComplexityError {}

/// Bucketed counts of oracle-feature combinations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinationHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl CombinationHistogram {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self, ComplexityError> {
        if counts.len() < 2 {
            return Err(ComplexityError::TooFewBuckets { got: counts.len() });
        }
        let total = counts.iter().sum();
        Ok(Self { counts, total })
    }

    pub fn n_buckets(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Character i is '1' iff oracle predicate i holds on the record.
pub fn combination_string(oracle: &OracleFeatureSet, record: &PatientRecord) -> String {
    oracle
        .features()
        .iter()
        .map(|p| if p.evaluate(record) { '1' } else { '0' })
        .collect()
}

/// Hashes case and control combination strings into aligned histograms.
/// Identical strings land in the same bucket on both sides.
pub fn bucketize(
    case_strings: &[String],
    control_strings: &[String],
    n_buckets: usize,
) -> Result<(CombinationHistogram, CombinationHistogram), ComplexityError> {
    if n_buckets < 2 {
        return Err(ComplexityError::TooFewBuckets { got: n_buckets });
    }
    let fill = |strings: &[String]| {
        let mut counts = vec![0u64; n_buckets];
        for s in strings {
            let bucket = (fnv1a64(s.as_bytes()) % n_buckets as u64) as usize;
            counts[bucket] += 1;
        }
        CombinationHistogram { total: strings.len() as u64, counts }
    };
    Ok((fill(case_strings), fill(control_strings)))
}

/// Shannon entropy in nats over non-empty buckets.
///
/// Terms are summed over the sorted bucket counts, so any relabeling of
/// buckets yields a bit-identical result.
pub fn entropy(hist: &CombinationHistogram) -> Result<f64, ComplexityError> {
    if hist.total == 0 {
        return Err(ComplexityError::EmptyHistogram);
    }
    let mut occupied: Vec<u64> = hist.counts.iter().copied().filter(|&c| c > 0).collect();
    occupied.sort_unstable_by(|a, b| b.cmp(a));
    let total = hist.total as f64;
    let mut h = 0.0;
    for c in occupied {
        let p = c as f64 / total;
        h -= p * math::ln(p);
    }
    Ok(h)
}

/// KL divergence D(P+ || P-) in nats with Laplace smoothing; finite for
/// every alpha > 0 even on disjoint supports.
pub fn kl_divergence(
    cases: &CombinationHistogram,
    controls: &CombinationHistogram,
    alpha: f64,
) -> Result<f64, ComplexityError> {
    if cases.n_buckets() != controls.n_buckets() {
        return Err(ComplexityError::BucketCountMismatch {
            cases: cases.n_buckets(),
            controls: controls.n_buckets(),
        });
    }
    if !(alpha > 0.0) {
        return Err(ComplexityError::InvalidAlpha(alpha));
    }
    let n = cases.n_buckets() as f64;
    let case_total = cases.total as f64 + alpha * n;
    let control_total = controls.total as f64 + alpha * n;
    let mut divergence = 0.0;
    for (&c_pos, &c_neg) in cases.counts.iter().zip(&controls.counts) {
        let p = (c_pos as f64 + alpha) / case_total;
        let q = (c_neg as f64 + alpha) / control_total;
        divergence += p * math::ln(p / q);
    }
    Ok(divergence)
}

/// The four summary fields reported per phenotype, plus the histograms
/// they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub phenotype: String,
    pub prevalence: f64,
    pub entropy_nats: f64,
    pub kl_nats: f64,
    pub cases: CombinationHistogram,
    pub controls: CombinationHistogram,
    pub alpha: f64,
}

/// Full pipeline: oracle features -> combination strings -> buckets ->
/// entropy of the cases and KL divergence between cases and controls.
pub fn analyze(
    cohort: &[PatientRecord],
    def: &PhenotypeDefinition,
    n_buckets: usize,
    alpha: f64,
) -> Result<ComplexityReport, ComplexityError> {
    let oracle = extract_oracle_features(def);
    let mut case_strings = Vec::new();
    let mut control_strings = Vec::new();
    for record in cohort {
        let s = combination_string(&oracle, record);
        if def.evaluate(record) {
            case_strings.push(s);
        } else {
            control_strings.push(s);
        }
    }
    if case_strings.is_empty() || control_strings.is_empty() {
        return Err(ComplexityError::DegenerateClasses {
            cases: case_strings.len(),
            controls: control_strings.len(),
        });
    }
    let prevalence = case_strings.len() as f64 / cohort.len() as f64;
    let (cases, controls) = bucketize(&case_strings, &control_strings, n_buckets)?;
    Ok(ComplexityReport {
        phenotype: def.name.clone(),
        prevalence,
        entropy_nats: entropy(&cases)?,
        kl_nats: kl_divergence(&cases, &controls, alpha)?,
        cases,
        controls,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Code;
    use crate::rule::parse_rule;
    use alloc::string::ToString;

    fn hist(counts: &[u64]) -> CombinationHistogram {
        CombinationHistogram::from_counts(counts.to_vec()).unwrap()
    }

    #[test]
    fn combination_string_marks_satisfied_predicates() {
        let def = parse_rule("X := has(A) and has(B) and has(C) and has(D)").unwrap();
        let oracle = extract_oracle_features(&def);
        let mut r = PatientRecord::new(0, 30, "F", "R0", "E0").unwrap();
        r.add_occurrences(Code::new("A").unwrap(), 1).unwrap();
        r.add_occurrences(Code::new("C").unwrap(), 2).unwrap();
        assert_eq!(combination_string(&oracle, &r), "1010");

        let empty = PatientRecord::new(1, 30, "F", "R0", "E0").unwrap();
        assert_eq!(combination_string(&oracle, &empty), "0000");
    }

    #[test]
    fn bucketize_matches_reference_fnv() {
        // reference FNV-1a 64 values computed independently beforehand
        assert_eq!(fnv1a64(b""), 14695981039346656037);
        assert_eq!(fnv1a64(b"1010"), 974448712637047725);
        assert_eq!(fnv1a64(b"1010") % 32, 13);
        assert_eq!(fnv1a64(b"0000") % 32, 21);

        let strings = vec!["1010".to_string(); 7];
        let (cases, controls) = bucketize(&strings, &strings[..3].to_vec(), 32).unwrap();
        assert_eq!(cases.counts()[13], 7);
        assert_eq!(cases.total(), 7);
        assert_eq!(cases.counts().iter().sum::<u64>(), 7);
        // the shared string collides into the same bucket on both sides
        assert_eq!(controls.counts()[13], 3);

        assert!(bucketize(&strings, &strings, 1).is_err());
    }

    #[test]
    fn entropy_analytic_cases() {
        let uniform = hist(&[3; 32]);
        assert!((entropy(&uniform).unwrap() - math::ln(32.0)).abs() < 1e-12);

        let point = hist(&[0, 9, 0, 0]);
        assert_eq!(entropy(&point).unwrap(), 0.0);

        // counts [2,1,1]: 0.5 ln 2 + 2 * 0.25 ln 4 = 1.5 ln 2
        let mixed = hist(&[2, 1, 1]);
        assert!((entropy(&mixed).unwrap() - 1.0397207708399179).abs() < 1e-12);

        assert_eq!(
            entropy(&hist(&[0, 0])).unwrap_err(),
            ComplexityError::EmptyHistogram
        );
    }

    #[test]
    fn entropy_is_exactly_permutation_invariant() {
        let a = hist(&[5, 0, 2, 91, 2, 7]);
        let b = hist(&[91, 2, 7, 5, 0, 2]);
        assert_eq!(entropy(&a).unwrap().to_bits(), entropy(&b).unwrap().to_bits());
    }

    #[test]
    fn kl_analytic_cases() {
        let p = hist(&[4, 1, 3]);
        assert!(kl_divergence(&p, &p, 1.0).unwrap().abs() < 1e-15);

        // [4,0] vs [0,4] with alpha 1: (5/6) ln 5 + (1/6) ln(1/5)
        let d = kl_divergence(&hist(&[4, 0]), &hist(&[0, 4]), 1.0).unwrap();
        assert!((d - 1.0729586082894003).abs() < 1e-12);

        // disjoint supports stay finite for any positive alpha
        for alpha in [1e-6, 0.01, 1.0, 5.0] {
            let d = kl_divergence(&hist(&[9, 0, 0]), &hist(&[0, 4, 4]), alpha).unwrap();
            assert!(d.is_finite() && d >= 0.0);
        }

        assert!(kl_divergence(&hist(&[1, 2]), &hist(&[1, 2, 3]), 1.0).is_err());
        assert!(kl_divergence(&hist(&[1, 2]), &hist(&[2, 1]), 0.0).is_err());
    }

    #[test]
    fn analyze_reports_table_fields() {
        let def = parse_rule("X := has(ICD9:A) and age>=0").unwrap();
        let mut cohort = Vec::new();
        for i in 0..20u64 {
            let mut r = PatientRecord::new(i, 30, "F", "R0", "E0").unwrap();
            if i < 4 {
                r.add_occurrences(Code::new("ICD9:A").unwrap(), 1).unwrap();
            }
            cohort.push(r);
        }
        let report = analyze(&cohort, &def, 32, 1.0).unwrap();
        assert_eq!(report.phenotype, "X");
        assert_eq!(report.prevalence, 0.2);
        // every positive shares one combination
        assert_eq!(report.entropy_nats, 0.0);
        assert!(report.kl_nats > 0.0);
        assert_eq!(report.cases.n_buckets(), 32);

        let all_pos = parse_rule("Y := age>=0").unwrap();
        assert!(matches!(
            analyze(&cohort, &all_pos, 32, 1.0),
            Err(ComplexityError::DegenerateClasses { .. })
        ));
    }
}

//! Synthetic cohorts: patient records, label derivation, multi-hot
//! encoding, auxiliary-task selection, and stratified splits.
//!
//! Records keep per-code occurrence counts (the rule DSL's `count(...)`
//! predicates need them); encoding binarizes to presence indicators, and
//! adds one indicator per demographic category and per integer age value.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::rng;
use crate::rule::PhenotypeDefinition;

mod generate;
pub use generate::{generate_cohort, GeneratorConfig, SignalBundle};

#[derive(Clone, Debug, PartialEq)]
pub enum CohortError {
    InvalidCode(String),
    InvalidAge(u32),
    ZeroPatients,
    InvalidFrequency { code: String, value: f64 },
    InvalidProbability(f64),
    ZeroCount(String),
    DuplicateCode(String),
    EmptyGrouping(String),
    LengthMismatch { left: usize, right: usize },
    DuplicateFeatureName(String),
    UnsortedIndices,
    IndexOutOfRange { index: u32, dim: u32 },
    BadFractions { sum: f64 },
    ClassTooSmall { positives: usize, negatives: usize },
    SizesNotAscending,
    InsufficientPool { eligible: usize, required: usize },
}

impl fmt::Display for CohortError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CohortError::InvalidCode(s) => write!(f, "invalid code identifier: {s:?}"),
            CohortError::InvalidAge(a) => write!(f, "age {a} outside 0..=110"),
            CohortError::ZeroPatients => write!(f, "cohort size must be positive"),
            CohortError::InvalidFrequency { code, value } => {
                write!(f, "frequency {value} for {code} outside (0, 1)")
            }
            CohortError::InvalidProbability(p) => write!(f, "probability {p} outside (0, 1)"),
            CohortError::ZeroCount(c) => write!(f, "occurrence count for {c} must be positive"),
            CohortError::DuplicateCode(c) => write!(f, "duplicate code {c}"),
            CohortError::EmptyGrouping(n) => write!(f, "grouping {n} has no member codes"),
            CohortError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            CohortError::DuplicateFeatureName(n) => write!(f, "duplicate feature name {n}"),
            CohortError::UnsortedIndices => write!(f, "feature indices not strictly increasing"),
            CohortError::IndexOutOfRange { index, dim } => {
                write!(f, "feature index {index} out of range for dimension {dim}")
            }
            CohortError::BadFractions { sum } => {
                write!(f, "split fractions must be positive and sum to 1, got sum {sum}")
            }
            CohortError::ClassTooSmall { positives, negatives } => write!(
                f,
                "cannot populate every split: {positives} positives, {negatives} negatives"
            ),
            CohortError::SizesNotAscending => write!(f, "auxiliary sizes must be ascending"),
            CohortError::InsufficientPool { eligible, required } => {
                write!(f, "only {eligible} eligible tasks, need {required}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CohortError {}

/// A namespaced code identifier such as `ICD9:250.00`, or a bare token.
///
/// Ordering is by namespace, then value, which fixes vocabulary order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct Code(String);

fn valid_code_segment(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_' | b'='))
}

impl Code {
    pub fn new(s: impl Into<String>) -> Result<Self, CohortError> {
        let s = s.into();
        let ok = match s.split_once(':') {
            Some((ns, value)) => valid_code_segment(ns) && valid_code_segment(value),
            None => valid_code_segment(&s),
        };
        if ok {
            Ok(Code(s))
        } else {
            Err(CohortError::InvalidCode(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Prefix before the first `:`, or `""` for bare codes.
    pub fn namespace(&self) -> &str {
        self.0.split_once(':').map_or("", |(ns, _)| ns)
    }

    pub fn value(&self) -> &str {
        self.0.split_once(':').map_or(self.0.as_str(), |(_, v)| v)
    }
}

impl PartialOrd for Code {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Code {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (self.namespace(), self.value()).cmp(&(other.namespace(), other.value()))
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(feature = "serde")]
impl TryFrom<String> for Code {
    type Error = CohortError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Code::new(s)
    }
}

#[cfg(feature = "serde")]
impl From<Code> for String {
    fn from(c: Code) -> String {
        c.0
    }
}

pub const MAX_AGE: u32 = 110;

/// One synthetic patient: demographics plus a multiset of codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientRecord {
    pub id: u64,
    pub age: u32,
    pub gender: String,
    pub race: String,
    pub ethnicity: String,
    codes: BTreeMap<Code, u32>,
}

impl PatientRecord {
    pub fn new(
        id: u64,
        age: u32,
        gender: impl Into<String>,
        race: impl Into<String>,
        ethnicity: impl Into<String>,
    ) -> Result<Self, CohortError> {
        if age > MAX_AGE {
            return Err(CohortError::InvalidAge(age));
        }
        Ok(Self {
            id,
            age,
            gender: gender.into(),
            race: race.into(),
            ethnicity: ethnicity.into(),
            codes: BTreeMap::new(),
        })
    }

    /// Adds `count` occurrences of `code` (count must be positive).
    pub fn add_occurrences(&mut self, code: Code, count: u32) -> Result<(), CohortError> {
        if count == 0 {
            return Err(CohortError::ZeroCount(code.0));
        }
        *self.codes.entry(code).or_insert(0) += count;
        Ok(())
    }

    /// Raises the stored count for `code` to at least `count`.
    pub fn ensure_at_least(&mut self, code: Code, count: u32) -> Result<(), CohortError> {
        if count == 0 {
            return Err(CohortError::ZeroCount(code.0));
        }
        let entry = self.codes.entry(code).or_insert(0);
        *entry = (*entry).max(count);
        Ok(())
    }

    /// Occurrence count for a code; unknown codes count 0.
    ///
    /// The `DEMO` namespace is answered from the demographic fields:
    /// `DEMO:gender=F`, `DEMO:race=...`, `DEMO:ethnicity=...` count 1 when
    /// they match the record.
    pub fn code_count(&self, code: &Code) -> u32 {
        if code.namespace() == "DEMO" {
            let matched = match code.value().split_once('=') {
                Some(("gender", v)) => self.gender == v,
                Some(("race", v)) => self.race == v,
                Some(("ethnicity", v)) => self.ethnicity == v,
                _ => false,
            };
            return matched as u32;
        }
        self.codes.get(code).copied().unwrap_or(0)
    }

    /// Codes with their counts, in vocabulary (namespace, value) order.
    pub fn codes(&self) -> impl Iterator<Item = (&Code, u32)> {
        self.codes.iter().map(|(c, &n)| (c, n))
    }

    pub fn n_codes(&self) -> usize {
        self.codes.len()
    }
}

/// Deterministic mapping from feature names to column indices.
///
/// Layout: code features in (namespace, value) order, then gender, race,
/// and ethnicity categories (each sorted), then ages in numeric order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl CodeVocabulary {
    pub fn from_cohort(cohort: &[PatientRecord]) -> Self {
        let mut codes = BTreeSet::new();
        let mut genders = BTreeSet::new();
        let mut races = BTreeSet::new();
        let mut ethnicities = BTreeSet::new();
        let mut ages = BTreeSet::new();
        for r in cohort {
            for (c, _) in r.codes() {
                codes.insert(c.clone());
            }
            genders.insert(r.gender.clone());
            races.insert(r.race.clone());
            ethnicities.insert(r.ethnicity.clone());
            ages.insert(r.age);
        }
        let mut names: Vec<String> = codes.iter().map(|c| c.as_str().to_string()).collect();
        names.extend(genders.iter().map(|g| alloc::format!("gender={g}")));
        names.extend(races.iter().map(|r| alloc::format!("race={r}")));
        names.extend(ethnicities.iter().map(|e| alloc::format!("ethnicity={e}")));
        names.extend(ages.iter().map(|a| alloc::format!("age={a}")));
        Self::from_names(names).expect("constructed names are distinct")
    }

    pub fn from_names(names: Vec<String>) -> Result<Self, CohortError> {
        let mut index = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i as u32).is_some() {
                return Err(CohortError::DuplicateFeatureName(name.clone()));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: u32) -> Option<&str> {
        self.names.get(index as usize).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Sparse binary multi-hot row: strictly increasing active indices.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureVector {
    indices: Vec<u32>,
    dim: u32,
}

impl FeatureVector {
    pub fn new(indices: Vec<u32>, dim: u32) -> Result<Self, CohortError> {
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(CohortError::UnsortedIndices);
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(CohortError::IndexOutOfRange { index: last, dim });
            }
        }
        Ok(Self { indices, dim })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }
}

/// Binary presence encoding: counts and any ordering are discarded.
pub fn encode(record: &PatientRecord, vocab: &CodeVocabulary) -> FeatureVector {
    let mut indices: Vec<u32> = Vec::with_capacity(record.n_codes() + 4);
    for (code, _) in record.codes() {
        if let Some(i) = vocab.index_of(code.as_str()) {
            indices.push(i);
        }
    }
    let demo = [
        alloc::format!("gender={}", record.gender),
        alloc::format!("race={}", record.race),
        alloc::format!("ethnicity={}", record.ethnicity),
        alloc::format!("age={}", record.age),
    ];
    for name in &demo {
        if let Some(i) = vocab.index_of(name) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    indices.dedup();
    FeatureVector::new(indices, vocab.len() as u32).expect("indices sorted and bounded")
}

/// Encoded rows with a target column and zero or more auxiliary columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<FeatureVector>,
    pub target: Vec<bool>,
    /// One vector per auxiliary task, each parallel to `features`.
    pub auxiliary: Vec<Vec<bool>>,
    pub task_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<FeatureVector>,
        target: Vec<bool>,
        auxiliary: Vec<Vec<bool>>,
        task_names: Vec<String>,
    ) -> Result<Self, CohortError> {
        if target.len() != features.len() {
            return Err(CohortError::LengthMismatch {
                left: features.len(),
                right: target.len(),
            });
        }
        for col in &auxiliary {
            if col.len() != features.len() {
                return Err(CohortError::LengthMismatch {
                    left: features.len(),
                    right: col.len(),
                });
            }
        }
        if task_names.len() != auxiliary.len() {
            return Err(CohortError::LengthMismatch {
                left: auxiliary.len(),
                right: task_names.len(),
            });
        }
        Ok(Self { features, target, auxiliary, task_names })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        if self.target.is_empty() {
            return 0.0;
        }
        self.target.iter().filter(|&&t| t).count() as f64 / self.target.len() as f64
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            auxiliary: self
                .auxiliary
                .iter()
                .map(|col| idx.iter().map(|&i| col[i]).collect())
                .collect(),
            task_names: self.task_names.clone(),
        }
    }
}

/// Applies a definition to every record; returns labels and prevalence.
pub fn label_cohort(cohort: &[PatientRecord], def: &PhenotypeDefinition) -> (Vec<bool>, f64) {
    let labels: Vec<bool> = cohort.iter().map(|r| def.evaluate(r)).collect();
    let prevalence = if labels.is_empty() {
        0.0
    } else {
        labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64
    };
    (labels, prevalence)
}

/// A named set of diagnosis codes used as an auxiliary classification task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhecodeGrouping {
    pub name: String,
    members: BTreeSet<Code>,
}

impl PhecodeGrouping {
    pub fn new(name: impl Into<String>, members: BTreeSet<Code>) -> Result<Self, CohortError> {
        let name = name.into();
        if members.is_empty() {
            return Err(CohortError::EmptyGrouping(name));
        }
        Ok(Self { name, members })
    }

    pub fn members(&self) -> impl Iterator<Item = &Code> {
        self.members.iter()
    }

    pub fn matches(&self, record: &PatientRecord) -> bool {
        self.members.iter().any(|c| record.code_count(c) >= 1)
    }
}

/// Label column per grouping: 1 iff the record carries any member code.
pub fn derive_phecode_tasks(
    cohort: &[PatientRecord],
    groupings: &[PhecodeGrouping],
) -> Vec<Vec<bool>> {
    groupings
        .iter()
        .map(|g| cohort.iter().map(|r| g.matches(r)).collect())
        .collect()
}

/// Nested auxiliary-task selection: the set for each size is a prefix of
/// the set for every larger size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NestedTaskSets {
    sizes: Vec<usize>,
    /// Pool indices in selection order; length = max size.
    selected: Vec<usize>,
}

impl NestedTaskSets {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Pool indices for one configured size.
    pub fn set(&self, size: usize) -> Option<&[usize]> {
        self.sizes.contains(&size).then(|| &self.selected[..size])
    }

    /// Pool indices for the largest configured size.
    pub fn largest(&self) -> &[usize] {
        &self.selected
    }
}

/// Uniform sampling without replacement from the prevalence-eligible pool.
pub fn select_auxiliary_tasks(
    pool: &[PhecodeGrouping],
    prevalences: &[f64],
    bounds: (f64, f64),
    sizes: &[usize],
    seed: u64,
) -> Result<NestedTaskSets, CohortError> {
    if pool.len() != prevalences.len() {
        return Err(CohortError::LengthMismatch { left: pool.len(), right: prevalences.len() });
    }
    if sizes.is_empty() || !sizes.windows(2).all(|w| w[0] < w[1]) || sizes[0] == 0 {
        return Err(CohortError::SizesNotAscending);
    }
    let (lo, hi) = bounds;
    let mut eligible: Vec<usize> = (0..pool.len())
        .filter(|&i| prevalences[i] >= lo && prevalences[i] <= hi)
        .collect();
    let need = *sizes.last().expect("sizes non-empty");
    if eligible.len() < need {
        return Err(CohortError::InsufficientPool { eligible: eligible.len(), required: need });
    }
    let mut rng = rng::seeded(seed);
    // partial Fisher-Yates: the first `need` entries are a uniform sample
    for i in 0..need {
        let j = i + rng::below(&mut rng, (eligible.len() - i) as u64) as usize;
        eligible.swap(i, j);
    }
    eligible.truncate(need);
    Ok(NestedTaskSets { sizes: sizes.to_vec(), selected: eligible })
}

/// Index partition of one stratified split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits positives and negatives independently by the given fractions.
///
/// Rounding: floor for train and validation, remainder to test. Each split
/// receives at least one member of each class or the call fails. Returned
/// index lists are sorted.
pub fn stratified_split(
    labels: &[bool],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices, CohortError> {
    let (ft, fv, fe) = fractions;
    let sum = ft + fv + fe;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0) || crate::math::abs(sum - 1.0) > 1e-9 {
        return Err(CohortError::BadFractions { sum });
    }
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l {
            positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    let class_sizes = (positives.len(), negatives.len());
    let mut rng = rng::seeded(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for class in [&mut positives, &mut negatives] {
        let n = class.len();
        let n_train = crate::math::floor(ft * n as f64) as usize;
        let n_val = crate::math::floor(fv * n as f64) as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(CohortError::ClassTooSmall {
                positives: class_sizes.0,
                negatives: class_sizes.1,
            });
        }
        rng::shuffle(&mut rng, class);
        train.extend_from_slice(&class[..n_train]);
        validation.extend_from_slice(&class[n_train..n_train + n_val]);
        test.extend_from_slice(&class[n_train + n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, validation, test })
}

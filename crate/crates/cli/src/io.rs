//! File formats: cohorts, vocabularies, definitions, model checkpoints,
//! and the CSV exports.
//!
//! Cohorts are tab-separated UTF-8, one patient per line, with fields
//! id, age, gender, race, ethnicity, and a space-separated list of
//! `code:count` pairs. Vocabularies are one feature name per line, line
//! number = index. Floats in CSVs are printed with Rust's shortest
//! round-trip formatting, so re-importing reproduces values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use phenolab_core::cohort::{Code, CodeVocabulary, PatientRecord};
use phenolab_core::complexity::ComplexityReport;
use phenolab_core::logreg::LinearModel;
use phenolab_core::nnet::ModelParams;
use phenolab_core::rule::{parse_rule, PhenotypeDefinition};
use serde::{Deserialize, Serialize};

use crate::experiment::{BestRecord, DeltaRecord, ResultTable, RunFailure, RunRecord};
use crate::Family;

pub fn cohort_to_string(cohort: &[PatientRecord]) -> String {
    let mut out = String::new();
    for r in cohort {
        let codes = r
            .codes()
            .map(|(c, n)| format!("{}:{n}", c.as_str()))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id, r.age, r.gender, r.race, r.ethnicity, codes
        );
    }
    out
}

pub fn write_cohort(path: &Path, cohort: &[PatientRecord]) -> Result<()> {
    fs::write(path, cohort_to_string(cohort))
        .with_context(|| format!("writing cohort {}", path.display()))
}

pub fn cohort_from_str(text: &str) -> Result<Vec<PatientRecord>> {
    let mut cohort = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            bail!("line {}: expected 6 tab-separated fields, got {}", lineno + 1, fields.len());
        }
        let id: u64 = fields[0].parse().with_context(|| format!("line {}: id", lineno + 1))?;
        let age: u32 = fields[1].parse().with_context(|| format!("line {}: age", lineno + 1))?;
        let mut record = PatientRecord::new(id, age, fields[2], fields[3], fields[4])
            .map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?;
        if !fields[5].is_empty() {
            for pair in fields[5].split(' ') {
                let Some((code, count)) = pair.rsplit_once(':') else {
                    bail!("line {}: malformed code:count pair {pair:?}", lineno + 1);
                };
                let count: u32 = count
                    .parse()
                    .with_context(|| format!("line {}: count in {pair:?}", lineno + 1))?;
                let code = Code::new(code).map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?;
                if record.code_count(&code) > 0 {
                    bail!("line {}: duplicate code {}", lineno + 1, code.as_str());
                }
                record
                    .add_occurrences(code, count)
                    .map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?;
            }
        }
        cohort.push(record);
    }
    Ok(cohort)
}

pub fn read_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading cohort {}", path.display()))?;
    cohort_from_str(&text).with_context(|| format!("in cohort {}", path.display()))
}

pub fn write_vocabulary(path: &Path, vocab: &CodeVocabulary) -> Result<()> {
    let mut out = String::new();
    for name in vocab.names() {
        let _ = writeln!(out, "{name}");
    }
    fs::write(path, out).with_context(|| format!("writing vocabulary {}", path.display()))
}

pub fn read_vocabulary(path: &Path) -> Result<CodeVocabulary> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    let names: Vec<String> = text.lines().map(str::to_string).collect();
    CodeVocabulary::from_names(names).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Definitions file: one rule per line; blank lines and `#` comments are
/// skipped.
pub fn definitions_from_str(text: &str) -> Result<Vec<PhenotypeDefinition>> {
    let mut defs: Vec<PhenotypeDefinition> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let def = parse_rule(trimmed)
            .map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?;
        if defs.iter().any(|d| d.name == def.name) {
            bail!("line {}: duplicate definition name {}", lineno + 1, def.name);
        }
        defs.push(def);
    }
    if defs.is_empty() {
        bail!("no definitions found");
    }
    Ok(defs)
}

pub fn read_definitions(path: &Path) -> Result<Vec<PhenotypeDefinition>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading definitions {}", path.display()))?;
    definitions_from_str(&text).with_context(|| format!("in definitions {}", path.display()))
}

pub fn write_definitions(path: &Path, defs: &[PhenotypeDefinition]) -> Result<()> {
    let mut out = String::new();
    for d in defs {
        let _ = writeln!(out, "{d}");
    }
    fs::write(path, out).with_context(|| format!("writing definitions {}", path.display()))
}

/// Versioned model checkpoint: spec, parameters, running statistics, and
/// the training seed, as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub params: ModelParams,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string_pretty(checkpoint)?;
    fs::write(path, json).with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .with_context(|| format!("in checkpoint {}", path.display()))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        bail!("unsupported checkpoint version {}", checkpoint.version);
    }
    Ok(checkpoint)
}

/// Non-zero weights by feature name, plus intercept and lambda.
pub fn linear_model_to_string(model: &LinearModel, vocab: &CodeVocabulary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "lambda {}", model.lambda);
    let _ = writeln!(out, "intercept {}", model.intercept);
    for (i, &w) in model.weights.iter().enumerate() {
        if w != 0.0 {
            let name = vocab.name(i as u32).unwrap_or("?");
            let _ = writeln!(out, "{name} {w}");
        }
    }
    out
}

pub const RUNS_CSV_HEADER: &str =
    "split,family,layers,width,lr,aux_size,val_auprc,test_auprc,seed,wall_ms";

fn run_record_csv(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.split,
        r.family,
        r.layers,
        r.width,
        r.learning_rate,
        r.aux_size,
        r.val_auprc,
        r.test_auprc,
        r.seed,
        r.wall_ms
    )
}

pub fn runs_to_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from(RUNS_CSV_HEADER);
    out.push('\n');
    for r in runs {
        out.push_str(&run_record_csv(r));
        out.push('\n');
    }
    out
}

pub fn runs_from_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RUNS_CSV_HEADER => {}
        Some(other) => bail!("unexpected runs header {other:?}"),
        None => bail!("empty runs file"),
    }
    let mut runs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            bail!("line {}: expected 10 fields, got {}", lineno + 2, f.len());
        }
        runs.push(RunRecord {
            split: f[0].parse()?,
            family: f[1].parse::<Family>()?,
            layers: f[2].parse()?,
            width: f[3].parse()?,
            learning_rate: f[4].parse()?,
            aux_size: f[5].parse()?,
            val_auprc: f[6].parse()?,
            test_auprc: f[7].parse()?,
            seed: f[8].parse()?,
            wall_ms: f[9].parse()?,
        });
    }
    Ok(runs)
}

pub fn write_runs_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    fs::write(path, runs_to_csv(runs)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    runs_from_csv(&text).with_context(|| format!("in {}", path.display()))
}

pub fn best_to_csv(best: &[BestRecord]) -> String {
    runs_to_csv(&best.iter().map(|b| b.run.clone()).collect::<Vec<_>>())
}

pub const DELTAS_CSV_HEADER: &str = "split,family_a,aux_a,family_b,aux_b,delta";

pub fn deltas_to_csv(deltas: &[DeltaRecord]) -> String {
    let mut out = String::from(DELTAS_CSV_HEADER);
    out.push('\n');
    for d in deltas {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.split, d.a.family, d.a.aux_size, d.b.family, d.b.aux_size, d.delta
        );
    }
    out
}

pub fn deltas_from_csv(text: &str) -> Result<Vec<DeltaRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == DELTAS_CSV_HEADER => {}
        Some(other) => bail!("unexpected deltas header {other:?}"),
        None => bail!("empty deltas file"),
    }
    let mut deltas = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("expected 6 fields, got {}", f.len());
        }
        deltas.push(DeltaRecord {
            split: f[0].parse()?,
            a: crate::FamilyKey { family: f[1].parse()?, aux_size: f[2].parse()? },
            b: crate::FamilyKey { family: f[3].parse()?, aux_size: f[4].parse()? },
            delta: f[5].parse()?,
        });
    }
    Ok(deltas)
}

pub fn failures_to_csv(failures: &[RunFailure]) -> String {
    let mut out = String::from("split,family,layers,width,lr,aux_size,seed,error\n");
    for f in failures {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:?}",
            f.split, f.family, f.layers, f.width, f.learning_rate, f.aux_size, f.seed, f.error
        );
    }
    out
}

/// Machine-readable experiment summary; `config` echoes the experiment
/// configuration canonically so a re-parse reproduces it byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub failures: usize,
    pub config: crate::ExperimentConfig,
}

pub fn summary_to_string(table: &ResultTable, config: &crate::ExperimentConfig) -> Result<String> {
    let summary =
        Summary { runs: table.runs.len(), failures: table.failures.len(), config: config.clone() };
    Ok(toml::to_string_pretty(&summary)?)
}

pub fn complexity_report_csv(reports: &[ComplexityReport]) -> String {
    let mut out = String::from("phenotype,prevalence,entropy_nats,kl_nats,n_buckets,alpha\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.phenotype,
            r.prevalence,
            r.entropy_nats,
            r.kl_nats,
            r.cases.n_buckets(),
            r.alpha
        );
    }
    out
}

pub fn histogram_csv(report: &ComplexityReport) -> String {
    let mut out = String::from("bucket,case_count,control_count\n");
    for (i, (c, n)) in report.cases.counts().iter().zip(report.controls.counts()).enumerate() {
        let _ = writeln!(out, "{i},{c},{n}");
    }
    out
}

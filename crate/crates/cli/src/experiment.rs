//! The experimental protocol: splits x hyperparameter grid x auxiliary
//! sizes, with per-run seeds derived from the master seed so results do
//! not depend on execution order. Model selection reads validation
//! scores only; the held-out test score of the winner is looked up
//! afterwards.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use phenolab_core::cohort::{
    derive_phecode_tasks, encode, label_cohort, select_auxiliary_tasks, stratified_split,
    CodeVocabulary, LabeledDataset, PatientRecord, PhecodeGrouping,
};
use phenolab_core::complexity::fnv1a64;
use phenolab_core::logreg::{fit_l1, predict_batch};
use phenolab_core::metrics::{auprc, ScoredLabels};
use phenolab_core::nnet::{predict, train, NetworkSpec, TaskData, TrainConfig};
use phenolab_core::rule::PhenotypeDefinition;

use crate::config::{ExperimentConfig, Family};

/// Stable per-run seed from the master seed and the run coordinates.
pub fn derive_seed(master: u64, purpose: &str, split: usize, family: &str, cell: usize) -> u64 {
    let key = format!("{master}:{purpose}:{split}:{family}:{cell}");
    fnv1a64(key.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub split: usize,
    pub family: Family,
    /// 0 for the logistic-regression baseline.
    pub layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    /// 0 for single-task and baseline runs.
    pub aux_size: usize,
    pub val_auprc: f64,
    pub test_auprc: f64,
    pub seed: u64,
    pub wall_ms: u64,
}

impl RunRecord {
    /// Equality over everything the protocol determines; wall time is a
    /// diagnostic and necessarily varies between executions.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.split == other.split
            && self.family == other.family
            && self.layers == other.layers
            && self.width == other.width
            && self.learning_rate == other.learning_rate
            && self.aux_size == other.aux_size
            && self.val_auprc == other.val_auprc
            && self.test_auprc == other.test_auprc
            && self.seed == other.seed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub split: usize,
    pub family: Family,
    pub layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub aux_size: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FamilyKey {
    pub family: Family,
    pub aux_size: usize,
}

impl std::fmt::Display for FamilyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.aux_size == 0 {
            write!(f, "{}", self.family)
        } else {
            write!(f, "{}@{}", self.family, self.aux_size)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestRecord {
    pub key: FamilyKey,
    pub run: RunRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRecord {
    pub split: usize,
    pub a: FamilyKey,
    pub b: FamilyKey,
    pub delta: f64,
}

pub struct ExperimentInputs<'a> {
    pub cohort: &'a [PatientRecord],
    pub definitions: &'a [PhenotypeDefinition],
    pub phecode_pool: &'a [PhecodeGrouping],
    pub config: &'a ExperimentConfig,
}

/// Singleton groupings for every distinct diagnosis code in the cohort.
pub fn auto_phecode_pool(cohort: &[PatientRecord]) -> Vec<PhecodeGrouping> {
    let mut codes = std::collections::BTreeSet::new();
    for r in cohort {
        for (c, _) in r.codes() {
            if c.namespace() == "ICD9" {
                codes.insert(c.clone());
            }
        }
    }
    codes
        .into_iter()
        .map(|c| {
            let name = format!("phe:{}", c.as_str());
            PhecodeGrouping::new(name, [c].into_iter().collect()).expect("singleton is non-empty")
        })
        .collect()
}

struct SplitData {
    train: LabeledDataset,
    validation: LabeledDataset,
    test: LabeledDataset,
}

struct RunPlan {
    split: usize,
    family: Family,
    layers: usize,
    width: usize,
    learning_rate: f64,
    aux_size: usize,
    seed: u64,
}

fn execute_run(
    plan: &RunPlan,
    data: &SplitData,
    input_dim: usize,
    config: &ExperimentConfig,
) -> Result<(f64, f64)> {
    match plan.family {
        Family::Stnn | Family::Mtnn => {
            let spec = NetworkSpec {
                input_dim,
                hidden_sizes: vec![plan.width; plan.layers],
                n_heads: 1 + plan.aux_size,
                batch_norm: true,
            };
            let train_data = TaskData::from_dataset(&data.train, plan.aux_size)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let val_data = TaskData::from_dataset(&data.validation, 0)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let train_config = TrainConfig {
                epochs: config.epochs,
                batch_size: config.batch_size,
                learning_rate: plan.learning_rate,
                seed: plan.seed,
            };
            let (params, history) = train(&spec, &train_data, &val_data, &train_config)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let val_auprc = history.val_auprc[history.selected_epoch];
            let scores = predict(&params, &data.test.features).map_err(|e| anyhow::anyhow!("{e}"))?;
            let scored = ScoredLabels::new(scores, data.test.target.clone())
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let test_auprc = auprc(&scored).map_err(|e| anyhow::anyhow!("{e}"))?;
            Ok((val_auprc, test_auprc))
        }
        Family::Lr => {
            let fit = fit_l1(
                &data.train.features,
                &data.train.target,
                &data.validation.features,
                &data.validation.target,
                &config.lr_baseline.to_l1_config(),
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            let val_auprc = fit
                .per_lambda
                .iter()
                .find(|d| d.lambda == fit.model.lambda)
                .map(|d| d.validation_auprc)
                .unwrap_or(0.0);
            let scores =
                predict_batch(&fit.model, &data.test.features).map_err(|e| anyhow::anyhow!("{e}"))?;
            let scored = ScoredLabels::new(scores, data.test.target.clone())
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let test_auprc = auprc(&scored).map_err(|e| anyhow::anyhow!("{e}"))?;
            Ok((val_auprc, test_auprc))
        }
    }
}

/// Runs every (split, family, auxiliary size, grid cell) combination.
/// Failed runs are recorded with a diagnostic and do not stop the
/// experiment. With `jobs > 1` the cells execute concurrently; results
/// are aggregated by plan position, so the table is identical either way.
pub fn run_experiment(inputs: &ExperimentInputs<'_>, jobs: usize) -> Result<ResultTable> {
    let config = inputs.config;
    config.validate()?;
    let target = inputs
        .definitions
        .iter()
        .find(|d| d.name == config.target)
        .with_context(|| format!("target definition {:?} not found", config.target))?;

    let (labels, prevalence) = label_cohort(inputs.cohort, target);
    if prevalence == 0.0 || prevalence == 1.0 {
        bail!("target {:?} has degenerate prevalence {prevalence}", config.target);
    }
    let vocab = CodeVocabulary::from_cohort(inputs.cohort);
    let features: Vec<_> = inputs.cohort.iter().map(|r| encode(r, &vocab)).collect();

    let pool_prevalences: Vec<f64> = inputs
        .phecode_pool
        .iter()
        .map(|g| {
            inputs.cohort.iter().filter(|r| g.matches(r)).count() as f64
                / inputs.cohort.len() as f64
        })
        .collect();

    let needs_aux = config.families.contains(&Family::Mtnn);

    // auxiliary selection: fixed across splits by default, optionally
    // redrawn per split; nested sets come from one selection call
    let selection_for = |split: usize| -> Result<Vec<usize>> {
        if !needs_aux {
            return Ok(Vec::new());
        }
        let sel_split = if config.aux_redraw_per_split { split } else { 0 };
        let seed = derive_seed(config.seed, "auxsel", sel_split, "-", 0);
        let sets = select_auxiliary_tasks(
            inputs.phecode_pool,
            &pool_prevalences,
            (config.aux_low, config.aux_high),
            &config.aux_sizes,
            seed,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(sets.largest().to_vec())
    };

    let build_dataset = |selection: &[usize]| -> Result<LabeledDataset> {
        let groupings: Vec<PhecodeGrouping> =
            selection.iter().map(|&i| inputs.phecode_pool[i].clone()).collect();
        let auxiliary = derive_phecode_tasks(inputs.cohort, &groupings);
        let task_names: Vec<String> = groupings.iter().map(|g| g.name.clone()).collect();
        LabeledDataset::new(features.clone(), labels.clone(), auxiliary, task_names)
            .map_err(|e| anyhow::anyhow!("{e}"))
    };
    let shared_dataset =
        if config.aux_redraw_per_split { None } else { Some(build_dataset(&selection_for(0)?)?) };

    let mut splits: Vec<SplitData> = Vec::with_capacity(config.splits);
    for split in 0..config.splits {
        let per_split;
        let dataset = match &shared_dataset {
            Some(shared) => shared,
            None => {
                per_split = build_dataset(&selection_for(split)?)?;
                &per_split
            }
        };
        let split_seed = derive_seed(config.seed, "split", split, "-", 0);
        let idx = stratified_split(
            &labels,
            (config.fractions[0], config.fractions[1], config.fractions[2]),
            split_seed,
        )
        .map_err(|e| anyhow::anyhow!("split {split}: {e}"))?;
        splits.push(SplitData {
            train: dataset.subset(&idx.train),
            validation: dataset.subset(&idx.validation),
            test: dataset.subset(&idx.test),
        });
    }

    // fixed plan order: split, then family, then aux size, then cell
    let grid = config.grid();
    let mut plans: Vec<RunPlan> = Vec::new();
    for split in 0..config.splits {
        for &family in &config.families {
            match family {
                Family::Stnn => {
                    for (cell, &(layers, width, lr)) in grid.iter().enumerate() {
                        plans.push(RunPlan {
                            split,
                            family,
                            layers,
                            width,
                            learning_rate: lr,
                            aux_size: 0,
                            seed: derive_seed(config.seed, "run", split, "stnn", cell),
                        });
                    }
                }
                Family::Mtnn => {
                    for (size_idx, &aux_size) in config.aux_sizes.iter().enumerate() {
                        for (cell, &(layers, width, lr)) in grid.iter().enumerate() {
                            let cell_id = size_idx * grid.len() + cell;
                            plans.push(RunPlan {
                                split,
                                family,
                                layers,
                                width,
                                learning_rate: lr,
                                aux_size,
                                seed: derive_seed(config.seed, "run", split, "mtnn", cell_id),
                            });
                        }
                    }
                }
                Family::Lr => {
                    plans.push(RunPlan {
                        split,
                        family,
                        layers: 0,
                        width: 0,
                        learning_rate: 0.0,
                        aux_size: 0,
                        seed: derive_seed(config.seed, "run", split, "lr", 0),
                    });
                }
            }
        }
    }

    let input_dim = vocab.len();
    let outcomes: Vec<Option<std::result::Result<RunRecord, RunFailure>>> =
        (0..plans.len()).map(|_| None).collect();
    let outcomes = Mutex::new(outcomes);
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(plans.len().max(1));

    let work = |_worker: usize| {
        loop {
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= plans.len() {
                break;
            }
            let plan = &plans[i];
            let started = Instant::now();
            let outcome = match execute_run(plan, &splits[plan.split], input_dim, config) {
                Ok((val_auprc, test_auprc)) => Ok(RunRecord {
                    split: plan.split,
                    family: plan.family,
                    layers: plan.layers,
                    width: plan.width,
                    learning_rate: plan.learning_rate,
                    aux_size: plan.aux_size,
                    val_auprc,
                    test_auprc,
                    seed: plan.seed,
                    wall_ms: started.elapsed().as_millis() as u64,
                }),
                Err(e) => Err(RunFailure {
                    split: plan.split,
                    family: plan.family,
                    layers: plan.layers,
                    width: plan.width,
                    learning_rate: plan.learning_rate,
                    aux_size: plan.aux_size,
                    seed: plan.seed,
                    error: format!("{e:#}"),
                }),
            };
            outcomes.lock().expect("poisoned").get_mut(i).map(|slot| *slot = Some(outcome));
        }
    };

    if workers <= 1 {
        work(0);
    } else {
        std::thread::scope(|scope| {
            for w in 0..workers {
                scope.spawn(move || work(w));
            }
        });
    }

    let mut table = ResultTable::default();
    for outcome in outcomes.into_inner().expect("poisoned") {
        match outcome.expect("every plan executed") {
            Ok(run) => table.runs.push(run),
            Err(failure) => table.failures.push(failure),
        }
    }
    Ok(table)
}

/// Selection reads validation scores only; the winning run's test score
/// is looked up after the winner is fixed.
fn select_best_by_validation(candidates: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(idx, val) in candidates {
        let better = best.map_or(true, |(_, best_val)| val > best_val);
        if better {
            best = Some((idx, val));
        }
    }
    best.map(|(idx, _)| idx)
}

/// Best run per (split, family, auxiliary size), chosen by validation
/// AUPRC with earliest-in-plan-order tie-break.
pub fn best_per_split(table: &ResultTable) -> Vec<BestRecord> {
    let mut keys: Vec<(usize, FamilyKey)> = Vec::new();
    for r in &table.runs {
        let key = (r.split, FamilyKey { family: r.family, aux_size: r.aux_size });
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by_key(|&(split, k)| (split, family_order(k.family), k.aux_size));
    let mut best = Vec::with_capacity(keys.len());
    for (split, key) in keys {
        let candidates: Vec<(usize, f64)> = table
            .runs
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.split == split && r.family == key.family && r.aux_size == key.aux_size
            })
            .map(|(i, r)| (i, r.val_auprc))
            .collect();
        if let Some(winner) = select_best_by_validation(&candidates) {
            best.push(BestRecord { key, run: table.runs[winner].clone() });
        }
    }
    best
}

fn family_order(f: Family) -> usize {
    match f {
        Family::Stnn => 0,
        Family::Mtnn => 1,
        Family::Lr => 2,
    }
}

/// Per-split difference in best-model test AUPRC between two family
/// groups: delta = test(best of a) - test(best of b).
pub fn pairwise_deltas(
    table: &ResultTable,
    a: FamilyKey,
    b: FamilyKey,
) -> Result<Vec<DeltaRecord>> {
    let best = best_per_split(table);
    let splits: std::collections::BTreeSet<usize> =
        table.runs.iter().map(|r| r.split).collect();
    let mut deltas = Vec::with_capacity(splits.len());
    for split in splits {
        let find = |key: FamilyKey| {
            best.iter()
                .find(|b| b.run.split == split && b.key == key)
                .map(|b| b.run.test_auprc)
                .with_context(|| format!("split {split} has no {key} runs"))
        };
        let delta = find(a)? - find(b)?;
        deltas.push(DeltaRecord { split, a, b, delta });
    }
    Ok(deltas)
}

pub fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

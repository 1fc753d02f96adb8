use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use phenolab::config::{AppConfig, Family};
use phenolab::experiment::{
    auto_phecode_pool, best_per_split, derive_seed, median, pairwise_deltas, run_experiment,
    ExperimentInputs, FamilyKey, ResultTable,
};
use phenolab::io;
use phenolab_core::cohort::{
    encode, label_cohort, select_auxiliary_tasks, stratified_split, CodeVocabulary,
    LabeledDataset, PatientRecord, PhecodeGrouping,
};
use phenolab_core::complexity::{analyze, DEFAULT_ALPHA, DEFAULT_BUCKETS};
use phenolab_core::logreg::{fit_l1, predict_batch};
use phenolab_core::metrics::{auprc, pr_curve, ScoredLabels};
use phenolab_core::nnet::{predict, train, NetworkSpec, TaskData, TrainConfig};
use phenolab_core::rule::PhenotypeDefinition;

/// Phenotyping experiments on synthetic EHR cohorts: rule-derived labels,
/// single- and multitask networks, a regularized linear baseline, and
/// complexity reports.
#[derive(Parser)]
#[command(name = "phenolab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its vocabulary.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Cohort output path (tab-separated records).
        #[arg(long, default_value = "cohort.tsv")]
        out_cohort: PathBuf,
        /// Vocabulary output path (one feature name per line).
        #[arg(long)]
        out_vocab: Option<PathBuf>,
    },
    /// Apply rule definitions to a cohort and report prevalences.
    Label {
        /// Cohort file produced by `generate`.
        #[arg(long)]
        cohort: PathBuf,
        /// Definitions file, one rule per line.
        #[arg(long)]
        definitions: PathBuf,
        /// Optional per-patient label CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select nested auxiliary task sets from the phecode pool.
    Tasks {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        cohort: PathBuf,
        /// Optional selection CSV (size,name,prevalence).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model on one split and report validation/test AUPRC.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        cohort: PathBuf,
        /// Model family: stnn, mtnn, or lr.
        #[arg(long)]
        family: Family,
        /// Split index within the experiment's split sequence.
        #[arg(long, default_value_t = 0)]
        split: usize,
        /// Hidden layer count (stnn/mtnn).
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Hidden layer width (stnn/mtnn).
        #[arg(long, default_value_t = 128)]
        width: usize,
        /// Learning rate (stnn/mtnn).
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Auxiliary task count (mtnn).
        #[arg(long, default_value_t = 0)]
        aux_size: usize,
        /// Write a model checkpoint (stnn/mtnn) as JSON.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the test-set precision-recall curve as CSV.
        #[arg(long)]
        pr_curve: Option<PathBuf>,
        /// Write the fitted linear model (lr) as text.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Run the full protocol: splits x grid x auxiliary sizes.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        /// Reuse a generated cohort instead of regenerating it.
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Output directory for runs/best/deltas/summary files.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Concurrent runs (results are identical for any value).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Entropy and KL-divergence complexity reports per definition.
    Complexity {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        definitions: PathBuf,
        /// Restrict to one definition by name.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BUCKETS)]
        buckets: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Output directory for report and histogram CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute best-per-split and pairwise deltas from a runs CSV.
    Report {
        /// runs.csv produced by `experiment`.
        #[arg(long)]
        runs: PathBuf,
        /// Output directory for best/deltas CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { config, out_cohort, out_vocab } => generate(config, out_cohort, out_vocab),
        Command::Label { cohort, definitions, out } => label(cohort, definitions, out),
        Command::Tasks { config, cohort, out } => tasks(config, cohort, out),
        Command::Train {
            config,
            cohort,
            family,
            split,
            layers,
            width,
            lr,
            aux_size,
            checkpoint,
            pr_curve,
            model_out,
        } => train_one(
            config, cohort, family, split, layers, width, lr, aux_size, checkpoint, pr_curve,
            model_out,
        ),
        Command::Experiment { config, cohort, out, jobs } => experiment(config, cohort, out, jobs),
        Command::Complexity { cohort, definitions, target, buckets, alpha, out } => {
            complexity(cohort, definitions, target, buckets, alpha, out)
        }
        Command::Report { runs, out } => report(runs, out),
    }
}

fn load_config(args: &ConfigArgs) -> Result<(AppConfig, u64)> {
    let mut config = AppConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.experiment.seed = seed;
    }
    let seed = config.experiment.seed;
    Ok((config, seed))
}

fn cohort_seed(master: u64) -> u64 {
    derive_seed(master, "cohort", 0, "-", 0)
}

fn generate(args: ConfigArgs, out_cohort: PathBuf, out_vocab: Option<PathBuf>) -> Result<()> {
    let (config, master) = load_config(&args)?;
    let generator = config.generator(cohort_seed(master))?;
    let cohort = phenolab_core::cohort::generate_cohort(&generator)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    io::write_cohort(&out_cohort, &cohort)?;
    println!("wrote {} patients to {}", cohort.len(), out_cohort.display());
    if let Some(path) = out_vocab {
        let vocab = CodeVocabulary::from_cohort(&cohort);
        io::write_vocabulary(&path, &vocab)?;
        println!("wrote {} features to {}", vocab.len(), path.display());
    }
    Ok(())
}

fn label(cohort_path: PathBuf, defs_path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let cohort = io::read_cohort(&cohort_path)?;
    let defs = io::read_definitions(&defs_path)?;
    println!("{:<24} {:>10} {:>10}", "phenotype", "positives", "prevalence");
    let mut columns: Vec<(String, Vec<bool>)> = Vec::new();
    for def in &defs {
        let (labels, prevalence) = label_cohort(&cohort, def);
        let positives = labels.iter().filter(|&&l| l).count();
        println!("{:<24} {:>10} {:>10.5}", def.name, positives, prevalence);
        columns.push((def.name.clone(), labels));
    }
    if let Some(path) = out {
        let mut text = String::from("id");
        for (name, _) in &columns {
            text.push(',');
            text.push_str(name);
        }
        text.push('\n');
        for (i, record) in cohort.iter().enumerate() {
            text.push_str(&record.id.to_string());
            for (_, labels) in &columns {
                text.push(',');
                text.push(if labels[i] { '1' } else { '0' });
            }
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote labels to {}", path.display());
    }
    Ok(())
}

fn assemble_pool(config: &AppConfig, cohort: &[PatientRecord]) -> Result<Vec<PhecodeGrouping>> {
    let mut pool = config.explicit_phecodes()?;
    if config.auto_phecodes {
        let named: BTreeSet<String> = pool.iter().map(|g| g.name.clone()).collect();
        for g in auto_phecode_pool(cohort) {
            if !named.contains(&g.name) {
                pool.push(g);
            }
        }
    }
    if pool.is_empty() {
        bail!("auxiliary pool is empty: define [[phecodes]] or enable auto_phecodes");
    }
    Ok(pool)
}

fn tasks(args: ConfigArgs, cohort_path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let (config, master) = load_config(&args)?;
    let cohort = io::read_cohort(&cohort_path)?;
    let pool = assemble_pool(&config, &cohort)?;
    let prevalences: Vec<f64> = pool
        .iter()
        .map(|g| cohort.iter().filter(|r| g.matches(r)).count() as f64 / cohort.len() as f64)
        .collect();
    let exp = &config.experiment;
    let sets = select_auxiliary_tasks(
        &pool,
        &prevalences,
        (exp.aux_low, exp.aux_high),
        &exp.aux_sizes,
        derive_seed(master, "auxsel", 0, "-", 0),
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut csv = String::from("size,name,prevalence\n");
    for &size in exp.aux_sizes.iter() {
        println!("auxiliary set of {size}:");
        for &idx in sets.set(size).expect("configured size") {
            println!("  {:<28} prevalence {:.5}", pool[idx].name, prevalences[idx]);
        }
    }
    for &idx in sets.largest() {
        use std::fmt::Write as _;
        let _ = writeln!(csv, "{},{},{}", sets.largest().len(), pool[idx].name, prevalences[idx]);
    }
    if let Some(path) = out {
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote selection to {}", path.display());
    }
    Ok(())
}

struct PreparedSplit {
    train: LabeledDataset,
    validation: LabeledDataset,
    test: LabeledDataset,
    vocab: CodeVocabulary,
}

fn prepare_split(
    config: &AppConfig,
    master: u64,
    cohort: &[PatientRecord],
    split: usize,
    aux_size: usize,
) -> Result<PreparedSplit> {
    let exp = &config.experiment;
    // callers resolve `definitions` relative to the config file first
    let defs = io::read_definitions(Path::new(&exp.definitions))?;
    let target = defs
        .iter()
        .find(|d| d.name == exp.target)
        .with_context(|| format!("target definition {:?} not found", exp.target))?;
    let (labels, _) = label_cohort(cohort, target);
    let vocab = CodeVocabulary::from_cohort(cohort);
    let features: Vec<_> = cohort.iter().map(|r| encode(r, &vocab)).collect();
    let auxiliary;
    let task_names;
    if aux_size > 0 {
        let pool = assemble_pool(config, cohort)?;
        let prevalences: Vec<f64> = pool
            .iter()
            .map(|g| cohort.iter().filter(|r| g.matches(r)).count() as f64 / cohort.len() as f64)
            .collect();
        let sel_split = if exp.aux_redraw_per_split { split } else { 0 };
        let sets = select_auxiliary_tasks(
            &pool,
            &prevalences,
            (exp.aux_low, exp.aux_high),
            &exp.aux_sizes,
            derive_seed(master, "auxsel", sel_split, "-", 0),
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        if !exp.aux_sizes.contains(&aux_size) {
            bail!("aux size {aux_size} is not one of the configured sizes {:?}", exp.aux_sizes);
        }
        let groupings: Vec<PhecodeGrouping> =
            sets.largest().iter().map(|&i| pool[i].clone()).collect();
        auxiliary = phenolab_core::cohort::derive_phecode_tasks(cohort, &groupings);
        task_names = groupings.iter().map(|g| g.name.clone()).collect();
    } else {
        auxiliary = Vec::new();
        task_names = Vec::new();
    }
    let dataset = LabeledDataset::new(features, labels.clone(), auxiliary, task_names)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let idx = stratified_split(
        &labels,
        (exp.fractions[0], exp.fractions[1], exp.fractions[2]),
        derive_seed(master, "split", split, "-", 0),
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(PreparedSplit {
        train: dataset.subset(&idx.train),
        validation: dataset.subset(&idx.validation),
        test: dataset.subset(&idx.test),
        vocab,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_one(
    args: ConfigArgs,
    cohort_path: PathBuf,
    family: Family,
    split: usize,
    layers: usize,
    width: usize,
    lr: f64,
    aux_size: usize,
    checkpoint: Option<PathBuf>,
    pr_curve_out: Option<PathBuf>,
    model_out: Option<PathBuf>,
) -> Result<()> {
    let (mut config, master) = load_config(&args)?;
    config.experiment.definitions =
        config.definitions_path(&args.config).to_string_lossy().into_owned();
    let cohort = io::read_cohort(&cohort_path)?;
    let effective_aux = if family == Family::Mtnn { aux_size } else { 0 };
    let data = prepare_split(&config, master, &cohort, split, effective_aux)?;
    let exp = &config.experiment;

    let (val_auprc, test_scores) = match family {
        Family::Stnn | Family::Mtnn => {
            let spec = NetworkSpec {
                input_dim: data.vocab.len(),
                hidden_sizes: vec![width; layers],
                n_heads: 1 + effective_aux,
                batch_norm: true,
            };
            let train_data = TaskData::from_dataset(&data.train, effective_aux)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let val_data =
                TaskData::from_dataset(&data.validation, 0).map_err(|e| anyhow::anyhow!("{e}"))?;
            let cell_seed = derive_seed(master, "train-cli", split, &family.to_string(), 0);
            let train_config = TrainConfig {
                epochs: exp.epochs,
                batch_size: exp.batch_size,
                learning_rate: lr,
                seed: cell_seed,
            };
            let (params, history) =
                train(&spec, &train_data, &val_data, &train_config).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("epoch losses: {:?}", history.train_loss);
            println!("validation AUPRC by epoch: {:?}", history.val_auprc);
            println!("selected epoch: {}", history.selected_epoch);
            if let Some(path) = checkpoint {
                io::write_checkpoint(
                    &path,
                    &io::Checkpoint { version: io::CHECKPOINT_VERSION, seed: cell_seed, params: params.clone() },
                )?;
                println!("wrote checkpoint to {}", path.display());
            }
            let scores = predict(&params, &data.test.features).map_err(|e| anyhow::anyhow!("{e}"))?;
            (history.val_auprc[history.selected_epoch], scores)
        }
        Family::Lr => {
            let fit = fit_l1(
                &data.train.features,
                &data.train.target,
                &data.validation.features,
                &data.validation.target,
                &exp.lr_baseline.to_l1_config(),
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            for d in &fit.per_lambda {
                println!(
                    "lambda {:<12.6e} iters {:>6} converged {:<5} val AUPRC {:.5} nonzeros {}",
                    d.lambda, d.iterations, d.converged, d.validation_auprc, d.nonzeros
                );
            }
            if let Some(path) = model_out {
                std::fs::write(&path, io::linear_model_to_string(&fit.model, &data.vocab))
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("wrote model to {}", path.display());
            }
            let chosen = fit
                .per_lambda
                .iter()
                .find(|d| d.lambda == fit.model.lambda)
                .map(|d| d.validation_auprc)
                .unwrap_or(0.0);
            let scores =
                predict_batch(&fit.model, &data.test.features).map_err(|e| anyhow::anyhow!("{e}"))?;
            (chosen, scores)
        }
    };

    let scored = ScoredLabels::new(test_scores, data.test.target.clone())
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let test_auprc = auprc(&scored).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("validation AUPRC {val_auprc:.5}");
    println!("test AUPRC {test_auprc:.5}");
    if let Some(path) = pr_curve_out {
        let curve = pr_curve(&scored).map_err(|e| anyhow::anyhow!("{e}"))?;
        std::fs::write(&path, curve.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote test PR curve to {}", path.display());
    }
    Ok(())
}

fn experiment(
    args: ConfigArgs,
    cohort_path: Option<PathBuf>,
    out: PathBuf,
    jobs: usize,
) -> Result<()> {
    let (config, master) = load_config(&args)?;
    let cohort = match cohort_path {
        Some(path) => io::read_cohort(&path)?,
        None => phenolab_core::cohort::generate_cohort(&config.generator(cohort_seed(master))?)
            .map_err(|e| anyhow::anyhow!("{e}"))?,
    };
    let defs = io::read_definitions(&config.definitions_path(&args.config))?;
    let pool = assemble_pool(&config, &cohort)?;
    let inputs = ExperimentInputs {
        cohort: &cohort,
        definitions: &defs,
        phecode_pool: &pool,
        config: &config.experiment,
    };
    let table = run_experiment(&inputs, jobs)?;
    write_experiment_outputs(&out, &table, &config)?;
    print_experiment_summary(&table);
    Ok(())
}

fn write_experiment_outputs(out: &Path, table: &ResultTable, config: &AppConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::write_runs_csv(&out.join("runs.csv"), &table.runs)?;
    let best = best_per_split(table);
    std::fs::write(out.join("best.csv"), io::best_to_csv(&best))?;
    let mut all_deltas = Vec::new();
    let stnn = FamilyKey { family: Family::Stnn, aux_size: 0 };
    let keys: BTreeSet<(usize, String)> = best
        .iter()
        .map(|b| (b.key.aux_size, b.key.family.to_string()))
        .collect();
    for (aux_size, family) in keys {
        let family: Family = family.parse()?;
        let key = FamilyKey { family, aux_size };
        if key == stnn || !best.iter().any(|b| b.key == stnn) {
            continue;
        }
        if let Ok(deltas) = pairwise_deltas(table, key, stnn) {
            all_deltas.extend(deltas);
        }
    }
    std::fs::write(out.join("deltas.csv"), io::deltas_to_csv(&all_deltas))?;
    if !table.failures.is_empty() {
        std::fs::write(out.join("failures.csv"), io::failures_to_csv(&table.failures))?;
    }
    std::fs::write(out.join("summary.toml"), io::summary_to_string(table, &config.experiment)?)?;
    println!("wrote results to {}", out.display());
    Ok(())
}

fn print_experiment_summary(table: &ResultTable) {
    let best = best_per_split(table);
    let mut keys: Vec<FamilyKey> = Vec::new();
    for b in &best {
        if !keys.contains(&b.key) {
            keys.push(b.key);
        }
    }
    println!("{:<12} {:>8} {:>14} {:>14}", "family", "splits", "median val", "median test");
    for key in keys {
        let mut vals: Vec<f64> =
            best.iter().filter(|b| b.key == key).map(|b| b.run.val_auprc).collect();
        let mut tests: Vec<f64> =
            best.iter().filter(|b| b.key == key).map(|b| b.run.test_auprc).collect();
        let n = vals.len();
        println!(
            "{:<12} {:>8} {:>14.5} {:>14.5}",
            key.to_string(),
            n,
            median(&mut vals),
            median(&mut tests)
        );
    }
    if !table.failures.is_empty() {
        println!("{} runs failed; see failures.csv", table.failures.len());
    }
}

fn complexity(
    cohort_path: PathBuf,
    defs_path: PathBuf,
    target: Option<String>,
    buckets: usize,
    alpha: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let cohort = io::read_cohort(&cohort_path)?;
    let defs = io::read_definitions(&defs_path)?;
    let selected: Vec<&PhenotypeDefinition> = match &target {
        Some(name) => {
            let def = defs
                .iter()
                .find(|d| &d.name == name)
                .with_context(|| format!("definition {name:?} not found"))?;
            vec![def]
        }
        None => defs.iter().collect(),
    };
    let mut reports = Vec::new();
    println!(
        "{:<24} {:>10} {:>14} {:>10}",
        "phenotype", "prevalence", "entropy (nats)", "KL (nats)"
    );
    for def in selected {
        let report = analyze(&cohort, def, buckets, alpha).map_err(|e| anyhow::anyhow!("{e}"))?;
        println!(
            "{:<24} {:>10.5} {:>14.4} {:>10.4}",
            report.phenotype, report.prevalence, report.entropy_nats, report.kl_nats
        );
        reports.push(report);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("complexity.csv"), io::complexity_report_csv(&reports))?;
        for report in &reports {
            std::fs::write(
                dir.join(format!("histogram_{}.csv", report.phenotype)),
                io::histogram_csv(report),
            )?;
        }
        println!("wrote reports to {}", dir.display());
    }
    Ok(())
}

fn report(runs_path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let runs = io::read_runs_csv(&runs_path)?;
    let table = ResultTable { runs, failures: Vec::new() };
    print_experiment_summary(&table);
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        let best = best_per_split(&table);
        std::fs::write(dir.join("best.csv"), io::best_to_csv(&best))?;
        let stnn = FamilyKey { family: Family::Stnn, aux_size: 0 };
        let mut all_deltas = Vec::new();
        let keys: BTreeSet<(usize, String)> =
            best.iter().map(|b| (b.key.aux_size, b.key.family.to_string())).collect();
        for (aux_size, family) in keys {
            let family: Family = family.parse()?;
            let key = FamilyKey { family, aux_size };
            if key != stnn {
                if let Ok(deltas) = pairwise_deltas(&table, key, stnn) {
                    all_deltas.extend(deltas);
                }
            }
        }
        std::fs::write(dir.join("deltas.csv"), io::deltas_to_csv(&all_deltas))?;
        println!("wrote best/deltas to {}", dir.display());
    }
    Ok(())
}

//! Experiment harness around `phenolab-core`: configuration files, cohort
//! and result persistence, and the splits x grid x auxiliary-size
//! protocol behind the `phenolab` command-line tool.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::{AppConfig, ExperimentConfig, Family};
pub use experiment::{
    best_per_split, pairwise_deltas, run_experiment, BestRecord, DeltaRecord, ExperimentInputs,
    FamilyKey, ResultTable, RunRecord,
};

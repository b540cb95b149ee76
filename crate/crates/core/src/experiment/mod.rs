//! End-to-end runs: configuration, data, training, evaluation, reports.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod report;
pub mod runs;
pub mod synthetic;
pub mod train;

pub use config::{Ablation, DataSource, ExperimentConfig};
pub use data::{load_dataset, prepare, Dataset, Prepared};
pub use evaluate::evaluate_embeddings;
pub use report::{emit_report, read_report, ExperimentReport};
pub use runs::{
    complete_run, run_ablation, run_ablation_suite, run_experiment, run_experiment_with, run_fairness_plugin,
    run_scalability, scalability_probe, single_run_report, CheckpointPolicy, FairGrouping,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use train::{run_training, Trainer, TrainingData};

//! End-to-end training, evaluation and experiment aggregation.

pub mod config;
pub mod experiment;
pub mod synthetic;
pub mod train;

pub use config::{Backbone, ExperimentConfig, Strategy};
pub use experiment::{
    augment_dataset, merge_results, results_table, run_ablation, run_experiment, run_grid,
    AugmentationReport, ExperimentResult, Summary,
};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use train::{evaluate, predict, train, train_baseline, train_fair_icd, ModelBundle, TrainedRun};

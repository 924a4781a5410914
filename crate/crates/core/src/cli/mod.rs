//! Experiment runner behind the `tgc` binary.

mod config;
mod run;

pub use config::{CsvSource, DataConfig, DataSource, ExperimentConfig, ModelSection};
pub use run::{
    ablation_variants, export_embeddings, run_ablation, run_gen_data, run_loss_sweep, run_sensitivity, run_train,
    sweep_threads, train_and_evaluate, AblationReport, AblationRow, LossSweepReport, LossSweepRow, RunResult,
    RunSummary, SensitivityReport, SensitivityRow, Skipped, SplitName, BUILD_ID, LOSS_RATIOS, SLICE_SWEEP,
};

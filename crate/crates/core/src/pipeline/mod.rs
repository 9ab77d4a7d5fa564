//! Experiment driver: configuration, end-to-end runs, and comparison suites.

mod config;
mod evaluate;
mod run;

pub use config::{
    AblationSection, ArchitectureSection, BaselineInput, DetectSection, EvalSection, ExperimentConfig, SCHEMA_VERSION,
};
pub use evaluate::{baseline_aucs, encode_rows, fit_centers, perturb_records, snr_report, BaselineAucs, SnrReport, TestView};
pub use run::{
    ablation_variants, evaluate_checkpoint, generate_dataset, run_experiment, EvalReport, run_suite, sha256_hex, snr_tag, train_on, train_run, FileEntry, RunManifest,
    RunReport, StageTiming, SuiteKind, SuiteReport, SuiteRow, TrainedRun, CHECKPOINT_FILE, CONFIG_FILE, DATASET_FILE,
    MANIFEST_FILE, REPORT_FILE, TRAIN_LOG_FILE,
};

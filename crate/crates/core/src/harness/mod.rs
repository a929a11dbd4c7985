//! Experiment harness: configuration files, presets, and report artifacts.

mod config;
mod presets;
mod run;

pub use config::{
    default_window, parse_config, render_config, ArchOptions, AttackOptions, DatasetConfig,
    ExperimentConfig, SemiOptions, VaccineOptions,
};
pub use presets::{find_preset, presets, Preset};
pub use run::{
    append_summary, execute, run_experiment, RunArtifacts, RunSummary, SUMMARY_HEADER,
};

//! Datasets, file formats, experiment configs and the experiment runner.

pub mod config;
mod dataset;
pub mod io;
pub mod run;

pub use config::{Experiment, ExperimentConfig};
pub use dataset::{
    empirical_behavior_policy, generate_dataset, generate_uniform_coverage, Transition, TransitionDataset,
    DEFAULT_EPISODE_CAP,
};
pub use io::{load_dataset, save_dataset};
pub use run::{config_hash, fmt_sig, run_experiment, RunOutput};

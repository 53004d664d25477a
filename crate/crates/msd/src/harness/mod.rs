//! Experiment harness: configuration, checkpoint IO, run orchestration, and
//! the self-check suite behind the CLI.

pub mod checkpoint;
pub mod config;
pub mod runner;
pub mod selfcheck;

pub use checkpoint::{checkpoint, restore};
pub use config::{synthetic_benchmark_config, AugConfig, DataConfig, RunConfig, SCHEMA_VERSION};
pub use runner::{
    format_eval_line, run_ablate, run_eval, run_sweep, run_train, AblationRow, EvalRequest,
    TrainArtifacts,
};
pub use selfcheck::run_selfcheck;

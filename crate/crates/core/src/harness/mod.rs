//! Command-line entry point, experiment configs, CSV outputs and checkpoints.

pub mod checkpoint;
mod cli;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, AgentDescriptor, Checkpoint};
pub use cli::{
    checkpoint_from_snapshot, compare_combiners, identity_for, oracle_row, run_subcommand, train, CombinerRow,
    CommonArgs, EvalRow, EvaluateRow, OracleRow, RobustnessRow, COMPARE_DEFAULT_STEPS,
};
pub use config::{config_hash, parse_config_file, parse_config_str, AgentIdentity, ExperimentConfig, RawConfig};

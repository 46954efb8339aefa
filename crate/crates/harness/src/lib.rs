//! Experiment orchestration for the multitask PDE solver: dataset generation,
//! solving, fixed-expression scoring, ablations and noise sweeps.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    build_instance, cmd_ablate, cmd_eval, cmd_generate, cmd_noise_sweep, cmd_solve, eval_grid, prepare_tasks,
    score_expression, Instance,
};
pub use config::ExperimentConfig;
pub use report::{AblationRow, AblationSummaryRow, NoiseRow, ResultRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: 1 for usage and configuration problems, 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

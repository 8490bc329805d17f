//! Command-line front end: configuration-driven experiment runners that emit
//! plot-ready CSV tables, invariant suites, and instance tooling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod cohort;
pub mod comm_complexity;
pub mod config;
pub mod fixed_point;
pub mod heatmap;
pub mod instance;
pub mod online_regret;
pub mod output;
pub mod validate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] icsim_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    /// 1 for failed invariant checks, 2 for everything the user must fix in
    /// the invocation or the config.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }
}

pub use app::{run, run_from_env};

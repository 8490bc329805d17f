//! Rounds needed by tuned Local SGD to reach a target error, as a function
//! of covariate shift `τ` at fixed concept shift.

use std::path::PathBuf;

use icsim_core::algorithms::TuneMetric;
use icsim_core::diagnostics::mean_se;
use serde::{Deserialize, Serialize};

use crate::cohort::{cell_instance, tune_trial, CohortSection, EtaGrid, TrialOutcome};
use crate::config::{config_hash, zero_and_log_grid};
use crate::output::{num, parallel_map, Report, Table};
use crate::{runtime_fields, CliError};

pub const COLUMNS: &[&str] = &["tau", "mean_rounds", "stderr", "frac_censored"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommComplexityConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub cohort: CohortSection,
    pub local_steps: u32,
    pub zeta_star: f64,
    pub target: f64,
    pub max_rounds: u32,
    pub trials: usize,
    pub eta: EtaGrid,
    pub grid_points: usize,
    pub tau_grid: Option<Vec<f64>>,
}

runtime_fields!(CommComplexityConfig);

impl Default for CommComplexityConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: None,
            cohort: CohortSection::default(),
            local_steps: 10,
            zeta_star: 1.0,
            target: 0.04,
            max_rounds: 100,
            trials: 20,
            eta: EtaGrid::default(),
            grid_points: 8,
            tau_grid: None,
        }
    }
}

impl CommComplexityConfig {
    pub fn resolved(mut self) -> Result<Self, CliError> {
        let n = self.grid_points;
        self.tau_grid
            .get_or_insert_with(|| zero_and_log_grid(2.0 * self.cohort.mu0, n));
        if self.trials == 0 || self.local_steps == 0 {
            return Err(CliError::Config("trials and local_steps must be positive".into()));
        }
        if !(self.target >= 0.0) {
            return Err(CliError::Config("target must be nonnegative".into()));
        }
        self.cohort
            .check_grid(&[self.zeta_star], self.tau_grid.as_deref().unwrap())?;
        self.eta.values()?;
        Ok(self)
    }

    /// Rounds reported for a trial that never reaches the target.
    pub fn censored_value(&self) -> f64 {
        self.max_rounds as f64 + 1.0
    }
}

pub fn run(cfg: &CommComplexityConfig) -> Result<Report, CliError> {
    let cfg = cfg.clone().resolved()?;
    let grid = cfg.eta.values()?;
    let taus = cfg.tau_grid.clone().unwrap();
    let metric = TuneMetric::RoundsToTarget {
        target: cfg.target,
        max_rounds: cfg.max_rounds,
    };
    let jobs: Vec<(f64, u64)> = taus
        .iter()
        .flat_map(|&t| (0..cfg.trials as u64).map(move |trial| (t, trial)))
        .collect();
    let outcomes: Vec<TrialOutcome> = parallel_map(cfg.workers, &jobs, |&(t, trial)| {
        let inst = cell_instance(cfg.seed, &cfg.cohort, cfg.zeta_star, t, trial)?;
        tune_trial(&inst, cfg.local_steps, cfg.max_rounds, &grid, metric, cfg.seed, trial)
    })?;

    let mut table = Table::new(COLUMNS);
    for (t, chunk) in taus.iter().zip(outcomes.chunks(cfg.trials)) {
        let rounds: Vec<f64> = chunk.iter().map(|o| o.metric).collect();
        let s = mean_se(&rounds);
        let censored = rounds.iter().filter(|&&r| r >= cfg.censored_value()).count() as f64 / rounds.len() as f64;
        table.push(vec![num(*t), num(s.mean), num(s.se), num(censored)]);
    }
    Ok(Report {
        experiment: "comm-complexity",
        config: serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?,
        config_hash: config_hash(&cfg),
        table,
        extras: Vec::new(),
    })
}

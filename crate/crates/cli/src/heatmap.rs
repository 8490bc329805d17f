//! Final error of tuned Local SGD over a grid of covariate shift `τ` and
//! concept shift `ζ★` on the regression cohort.

use std::path::PathBuf;

use icsim_core::algorithms::TuneMetric;
use icsim_core::diagnostics::mean_se;
use serde::{Deserialize, Serialize};

use crate::cohort::{cell_instance, tune_trial, CohortSection, EtaGrid, TrialOutcome};
use crate::config::{config_hash, zero_and_log_grid};
use crate::output::{mode, num, parallel_map, Report, Table};
use crate::{runtime_fields, CliError};

pub const COLUMNS: &[&str] = &[
    "tau",
    "zeta_star",
    "mean_err",
    "stderr",
    "best_eta_mode",
    "mean_err_global",
    "stderr_global",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub cohort: CohortSection,
    pub local_steps: u32,
    pub rounds: u32,
    pub trials: usize,
    pub eta: EtaGrid,
    /// Points per axis when a grid is not given explicitly.
    pub grid_points: usize,
    pub tau_grid: Option<Vec<f64>>,
    pub zeta_grid: Option<Vec<f64>>,
}

runtime_fields!(HeatmapConfig);

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: None,
            cohort: CohortSection::default(),
            local_steps: 10,
            rounds: 5,
            trials: 20,
            eta: EtaGrid::default(),
            grid_points: 8,
            tau_grid: None,
            zeta_grid: None,
        }
    }
}

impl HeatmapConfig {
    /// Fills in default grids: zero followed by log-spaced values up to
    /// `2μ₀` for `τ` and `2R★` for `ζ★`.
    pub fn resolved(mut self) -> Result<Self, CliError> {
        let n = self.grid_points;
        self.tau_grid
            .get_or_insert_with(|| zero_and_log_grid(2.0 * self.cohort.mu0, n));
        self.zeta_grid
            .get_or_insert_with(|| zero_and_log_grid(2.0 * self.cohort.r_star, n));
        if self.trials == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(CliError::Config(
                "trials, local_steps and rounds must be positive".into(),
            ));
        }
        self.cohort
            .check_grid(self.zeta_grid.as_deref().unwrap(), self.tau_grid.as_deref().unwrap())?;
        self.eta.values()?;
        Ok(self)
    }
}

/// Rows are ordered by `ζ★`, then `τ`.
pub fn run(cfg: &HeatmapConfig) -> Result<Report, CliError> {
    let cfg = cfg.clone().resolved()?;
    let grid = cfg.eta.values()?;
    let taus = cfg.tau_grid.clone().unwrap();
    let zetas = cfg.zeta_grid.clone().unwrap();
    let mut jobs = Vec::new();
    for &z in &zetas {
        for &t in &taus {
            for trial in 0..cfg.trials as u64 {
                jobs.push((z, t, trial));
            }
        }
    }
    let outcomes: Vec<TrialOutcome> = parallel_map(cfg.workers, &jobs, |&(z, t, trial)| {
        let inst = cell_instance(cfg.seed, &cfg.cohort, z, t, trial)?;
        tune_trial(
            &inst,
            cfg.local_steps,
            cfg.rounds,
            &grid,
            TuneMetric::FinalError,
            cfg.seed,
            trial,
        )
    })?;

    let mut table = Table::new(COLUMNS);
    for (cell, chunk) in outcomes.chunks(cfg.trials).enumerate() {
        let (z, t) = (zetas[cell / taus.len()], taus[cell % taus.len()]);
        let err = mean_se(&chunk.iter().map(|o| o.metric).collect::<Vec<_>>());
        let glob = mean_se(&chunk.iter().map(|o| o.global_metric).collect::<Vec<_>>());
        let eta = mode(&chunk.iter().map(|o| o.best_eta).collect::<Vec<_>>());
        table.push(vec![
            num(t),
            num(z),
            num(err.mean),
            num(err.se),
            num(eta),
            num(glob.mean),
            num(glob.se),
        ]);
    }
    Ok(Report {
        experiment: "heatmap",
        config: serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?,
        config_hash: config_hash(&cfg),
        table,
        extras: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HeatmapConfig {
        HeatmapConfig {
            cohort: CohortSection {
                dim: 3,
                machines: 4,
                ..CohortSection::default()
            },
            local_steps: 4,
            rounds: 2,
            trials: 1,
            tau_grid: Some(vec![0.0, 5.0]),
            zeta_grid: Some(vec![0.0, 1.0]),
            ..HeatmapConfig::default()
        }
    }

    #[test]
    fn two_by_two_grid_gives_four_rows() {
        let report = run(&tiny()).unwrap();
        assert_eq!(report.table.rows.len(), 4);
        assert_eq!(report.table.numbers("tau").unwrap(), vec![0.0, 5.0, 0.0, 5.0]);
        assert_eq!(report.table.numbers("zeta_star").unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        assert!(report.csv().starts_with("tau,zeta_star,mean_err,stderr,best_eta_mode"));
    }

    #[test]
    fn default_grids_span_the_admissible_ranges() {
        let cfg = HeatmapConfig::default().resolved().unwrap();
        let taus = cfg.tau_grid.unwrap();
        let zetas = cfg.zeta_grid.unwrap();
        assert_eq!((taus.len(), zetas.len()), (8, 8));
        assert_eq!((taus[0], zetas[0]), (0.0, 0.0));
        assert!((taus[7] - 10.0).abs() < 1e-12 && (zetas[7] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_grid_is_a_config_error() {
        let cfg = HeatmapConfig {
            zeta_grid: Some(vec![3.0]),
            ..tiny()
        };
        assert_eq!(run(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let one = run(&tiny()).unwrap();
        let three = run(&HeatmapConfig { workers: 3, ..tiny() }).unwrap();
        assert_eq!(one.csv(), three.csv());
    }
}

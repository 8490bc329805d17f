//! Average regret against the horizon for the online runners.

use std::path::PathBuf;

use icsim_core::algorithms::ICSchedule;
use icsim_core::diagnostics::mean_se;
use icsim_core::online::{
    make_linear_adversary, run_fed_osgd, run_fed_posgd, run_nc_ogd, tuned_fed_osgd, tuned_fed_posgd, tuned_nc_ogd,
    AdversaryKind, OnlineConfig,
};
use icsim_core::streams::{derive_seed, tag};
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::output::{log_log_slope, num, parallel_map, Report, Table};
use crate::{runtime_fields, CliError};

pub const COLUMNS: &[&str] = &["algorithm", "adversary", "T", "mean_regret", "stderr", "fitted_slope"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineAlgorithm {
    NcOgd,
    FedPosgd,
    FedOsgd,
}

impl OnlineAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            OnlineAlgorithm::NcOgd => "nc-ogd",
            OnlineAlgorithm::FedPosgd => "fed-posgd",
            OnlineAlgorithm::FedOsgd => "fed-osgd",
        }
    }
}

fn adversary_name(kind: AdversaryKind) -> &'static str {
    match kind {
        AdversaryKind::StochasticIid => "stochastic-iid",
        AdversaryKind::CoordinatedRademacher => "coordinated-rademacher",
        AdversaryKind::HeterogeneityControlled => "heterogeneity-controlled",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineRegretConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub algorithms: Vec<OnlineAlgorithm>,
    pub adversary: AdversaryKind,
    /// `G`; zero gives the all-zero adversary.
    pub gradient_bound: f64,
    /// `B`.
    pub ball_radius: f64,
    pub dim: usize,
    pub machines: usize,
    pub local_steps: u32,
    pub horizons: Vec<u64>,
    pub zeta_hat: f64,
    pub trials: usize,
    /// Fixed step size; tuned per horizon when absent.
    pub step: Option<f64>,
    /// Fixed smoothing radius; tuned per horizon when absent.
    pub smoothing: Option<f64>,
}

runtime_fields!(OnlineRegretConfig);

impl Default for OnlineRegretConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: None,
            algorithms: vec![OnlineAlgorithm::FedOsgd],
            adversary: AdversaryKind::StochasticIid,
            gradient_bound: 1.0,
            ball_radius: 1.0,
            dim: 5,
            machines: 4,
            local_steps: 1,
            horizons: (6..=12).map(|j| 1u64 << j).collect(),
            zeta_hat: 0.0,
            trials: 20,
            step: None,
            smoothing: None,
        }
    }
}

impl OnlineRegretConfig {
    fn validate(&self) -> Result<(), CliError> {
        if self.algorithms.is_empty() || self.horizons.is_empty() || self.trials == 0 {
            return Err(CliError::Config(
                "need algorithms, horizons and at least one trial".into(),
            ));
        }
        if self.local_steps == 0 {
            return Err(CliError::Config("local_steps must be at least 1".into()));
        }
        if let Some(t) = self
            .horizons
            .iter()
            .find(|&&t| t == 0 || t % self.local_steps as u64 != 0)
        {
            return Err(CliError::Config(format!(
                "horizon {t} is not a positive multiple of local_steps {}",
                self.local_steps
            )));
        }
        Ok(())
    }

    /// Step and smoothing radius used by `alg` at horizon `schedule`.
    pub fn parameters(&self, alg: OnlineAlgorithm, schedule: &ICSchedule) -> (f64, f64) {
        let (g, b) = (self.gradient_bound, self.ball_radius);
        let (eta, delta) = match alg {
            OnlineAlgorithm::NcOgd => (tuned_nc_ogd(g, b, schedule), b),
            OnlineAlgorithm::FedPosgd => tuned_fed_posgd(g, b, self.dim, schedule, self.zeta_hat),
            OnlineAlgorithm::FedOsgd => tuned_fed_osgd(g, b, self.dim, schedule),
        };
        (self.step.unwrap_or(eta), self.smoothing.unwrap_or(delta))
    }
}

/// Average regret of one trial. Trial `i` at horizon `T` faces the same
/// adversary and the same directions for every algorithm.
pub fn trial_regret(cfg: &OnlineRegretConfig, alg: OnlineAlgorithm, horizon: u64, trial: u64) -> Result<f64, CliError> {
    let rounds = u32::try_from(horizon / cfg.local_steps as u64)
        .map_err(|_| CliError::Config(format!("horizon {horizon} too large")))?;
    let schedule = ICSchedule::new(cfg.machines, cfg.local_steps, rounds)?;
    let (eta, delta) = cfg.parameters(alg, &schedule);
    let online = OnlineConfig::new(eta, delta, cfg.ball_radius, schedule)?;
    let adv = make_linear_adversary(
        cfg.adversary,
        cfg.gradient_bound,
        cfg.dim,
        cfg.machines,
        cfg.zeta_hat,
        derive_seed(cfg.seed, &[tag::ADVERSARY, horizon, trial]),
    )?;
    let seed = derive_seed(cfg.seed, &[tag::TRIAL, horizon, trial]);
    let trace = match alg {
        OnlineAlgorithm::NcOgd => run_nc_ogd(&adv, &online, seed)?,
        OnlineAlgorithm::FedPosgd => run_fed_posgd(&adv, &online, seed)?,
        OnlineAlgorithm::FedOsgd => run_fed_osgd(&adv, &online, seed)?,
    };
    Ok(trace.avg_regret)
}

pub fn run(cfg: &OnlineRegretConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &alg in &cfg.algorithms {
        for &t in &cfg.horizons {
            for trial in 0..cfg.trials as u64 {
                jobs.push((alg, t, trial));
            }
        }
    }
    let regrets = parallel_map(cfg.workers, &jobs, |&(alg, t, trial)| trial_regret(cfg, alg, t, trial))?;

    let mut table = Table::new(COLUMNS);
    let per_alg = cfg.horizons.len() * cfg.trials;
    for (alg, block) in cfg.algorithms.iter().zip(regrets.chunks(per_alg)) {
        let stats: Vec<_> = block.chunks(cfg.trials).map(mean_se).collect();
        let xs: Vec<f64> = cfg.horizons.iter().map(|&t| t as f64).collect();
        let ys: Vec<f64> = stats.iter().map(|s| s.mean).collect();
        let slope = log_log_slope(&xs, &ys).map(num).unwrap_or_default();
        for (t, s) in cfg.horizons.iter().zip(&stats) {
            table.push(vec![
                alg.name().to_string(),
                adversary_name(cfg.adversary).to_string(),
                t.to_string(),
                num(s.mean),
                num(s.se),
                slope.clone(),
            ]);
        }
    }
    Ok(Report {
        experiment: "online-regret",
        config: serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?,
        config_hash: config_hash(cfg),
        table,
        extras: Vec::new(),
    })
}
